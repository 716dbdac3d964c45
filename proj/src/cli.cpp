// SPDX-License-Identifier: Apache-2.0
#include "cdiff/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdiff/checksum.hpp"
#include "cdiff/config.hpp"
#include "cdiff/evaluate.hpp"
#include "cdiff/ptf.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/trainer.hpp"

namespace fs = std::filesystem;

namespace cdiff {

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Manifest load_dataset(const fs::path& data) {
  return Manifest::load(fs::is_directory(data) ? data / "manifest.tsv" : data);
}

/// Per-invocation state shared by the subcommand handlers.
struct Invocation {
  std::string command_line;
  fs::path config_path;
  fs::path out_dir;
  Config config;

  void begin() {
    config = parse_config(config_path);
    fs::create_directories(out_dir);
    started = utc_now();
  }
  void finish() {
    RunManifest m;
    m.command_line = command_line;
    m.config_text = config.to_text();
    m.seed = config.seed;
    m.started = started;
    m.finished = utc_now();
    m.write(out_dir);
  }
  std::string started;
};

const char* category(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ImageIoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "diverged";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  return "runtime";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\t') c = ' ';
  }
  return s;
}

}  // namespace

void RunManifest::write(const fs::path& dir) {
  checksums.clear();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == kRunManifestName) continue;
    checksums[rel] = sha256_file(entry.path());
  }
  std::ostringstream os;
  os << "tool\tcdiff " << kToolVersion << "\n";
  os << "command\t" << command_line << "\n";
  os << "seed\t" << seed << "\n";
  os << "started\t" << started << "\n";
  os << "finished\t" << finished << "\n";
  std::istringstream cfg(config_text);
  for (std::string line; std::getline(cfg, line);) os << "config\t" << line << "\n";
  for (const auto& [path, sum] : checksums) os << "file\t" << sum << "\t" << path << "\n";
  write_text(dir / kRunManifestName, os.str());
}

RunManifest RunManifest::read(const fs::path& dir) {
  std::ifstream in(dir / kRunManifestName);
  if (!in) throw FormatError("no run manifest in " + dir.string());
  RunManifest m;
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    const std::string kind = line.substr(0, tab), rest = line.substr(tab + 1);
    if (kind == "command") {
      m.command_line = rest;
    } else if (kind == "seed") {
      m.seed = std::stoull(rest);
    } else if (kind == "started") {
      m.started = rest;
    } else if (kind == "finished") {
      m.finished = rest;
    } else if (kind == "config") {
      m.config_text += rest + "\n";
    } else if (kind == "file") {
      const auto tab2 = rest.find('\t');
      m.checksums[rest.substr(tab2 + 1)] = rest.substr(0, tab2);
    }
  }
  return m;
}

std::vector<std::string> RunManifest::verify(const fs::path& dir) {
  std::vector<std::string> bad;
  const RunManifest m = read(dir);
  for (const auto& [path, sum] : m.checksums) {
    if (!fs::exists(dir / path) || sha256_file(dir / path) != sum) bad.push_back(path);
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != kRunManifestName && !m.checksums.contains(rel)) bad.push_back(rel);
  }
  return bad;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence-guided latent diffusion for SAR-to-EO translation", "cdiff"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cdiff ") + kToolVersion);

  Invocation inv;
  for (int i = 0; i < argc; ++i) inv.command_line += (i ? " " : "") + std::string(argv[i]);

  std::function<void()> action;
  auto common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", inv.config_path, "Config file (section.key = value)")->check(CLI::ExistingFile);
    auto* o = sub->add_option("--out", inv.out_dir, "Run output directory");
    if (needs_out) o->required();
  };

  // gen-data
  std::size_t count = 0;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic paired dataset");
  common(gen);
  gen->add_option("--count", count, "Number of scenes (overrides data.count)");
  gen->callback([&] {
    action = [&] {
      inv.begin();
      write_dataset(inv.config.scene, count ? count : inv.config.data_count, inv.out_dir);
      inv.finish();
    };
  });

  // ingest
  fs::path sar_dir, eo_dir;
  auto* ingest = app.add_subcommand("ingest", "Pair SAR/EO image directories into a manifest");
  common(ingest);
  ingest->add_option("--sar-dir", sar_dir, "Directory of SAR PGM images")->required();
  ingest->add_option("--eo-dir", eo_dir, "Directory of EO PPM images")->required();
  ingest->callback([&] {
    action = [&] {
      inv.begin();
      ingest_paired_dir(sar_dir, eo_dir, inv.config.seed).save(inv.out_dir / "manifest.tsv");
      inv.finish();
    };
  });

  // train-vae
  fs::path data;
  auto* tvae = app.add_subcommand("train-vae", "Train and freeze the latent codec on EO images");
  common(tvae);
  tvae->add_option("--data", data, "Dataset directory or manifest")->required();
  tvae->callback([&] {
    action = [&] {
      inv.begin();
      const Manifest m = load_dataset(data);
      std::vector<Tensor> images;
      for (const auto& s : load_split(m, Split::train, inv.config.sar_normalization)) images.push_back(s.eo.pixels);
      std::ostringstream log;
      log << "step\tloss\n";
      const VaeParameters vae = train_vae(images, inv.config.vae, nullptr, [&](std::size_t step, double loss) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", step, loss);
        log << buf;
      });
      vae.save(inv.out_dir / "vae");
      write_text(inv.out_dir / "vae_log.tsv", log.str());
      write_text(inv.out_dir / "config.txt", inv.config.to_text());
      inv.finish();
    };
  });

  // probe-vae
  fs::path checkpoint;
  std::string speckle = "0,0.1,0.3,1.0";
  std::size_t limit = 0;
  auto* probe = app.add_subcommand("probe-vae", "Reconstruction PSNR of speckled inputs through the VAE");
  common(probe);
  probe->add_option("--checkpoint", checkpoint, "Directory containing vae/")->required();
  probe->add_option("--data", data, "Dataset directory or manifest")->required();
  probe->add_option("--speckle", speckle, "Comma-separated speckle variances");
  probe->add_option("--limit", limit, "Use at most this many test images");
  probe->callback([&] {
    action = [&] {
      inv.begin();
      const auto levels = parse_list(speckle, "--speckle");
      const VaeParameters vae = VaeParameters::load(checkpoint / "vae");
      auto test = load_split(load_dataset(data), Split::test, inv.config.sar_normalization);
      if (limit && test.size() > limit) test.resize(limit);
      if (test.empty()) throw std::invalid_argument("probe-vae: test split is empty");
      std::vector<double> sums(levels.size(), 0.0);
      for (const auto& s : test) {
        const auto rows = reconstruction_probe(s.eo, vae, levels, sample_seed(inv.config.seed, s.id));
        for (std::size_t i = 0; i < rows.size(); ++i) sums[i] += rows[i].psnr;
      }
      std::string report = "level\tpsnr\n";
      for (std::size_t i = 0; i < levels.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%g\t%.6f\n", levels[i], sums[i] / static_cast<double>(test.size()));
        report += buf;
      }
      write_text(inv.out_dir / "probe.tsv", report);
      out << report;
      inv.finish();
    };
  });

  // train-set
  fs::path vae_dir, resume_dir;
  auto* tset = app.add_subcommand("train-set", "Train the conditional denoiser");
  common(tset);
  tset->add_option("--data", data, "Dataset directory or manifest")->required();
  tset->add_option("--vae", vae_dir, "Run directory containing a trained vae/")->required();
  tset->add_option("--resume", resume_dir, "Checkpoint directory to continue from");
  tset->callback([&] {
    action = [&] {
      inv.begin();
      const VaeParameters vae = VaeParameters::load(vae_dir / "vae");
      const std::string vae_sum = checksum(vae.parameters());
      const auto samples = load_split(load_dataset(data), Split::train, inv.config.sar_normalization);
      const LatentDataset latents = LatentDataset::build(samples, vae);
      const NoiseSchedule schedule = inv.config.schedule();
      TrainState state = resume_dir.empty() ? init_train_state(inv.config.train) : resume(resume_dir);
      std::ostringstream log;
      log << "step\tlr\tloss\tmean_conf\n";
      TrainHooks hooks;
      hooks.log = &log;
      hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(s, inv.out_dir); };
      train(state, latents, schedule, inv.config.train, hooks);
      if (checksum(vae.parameters()) != vae_sum) throw std::logic_error("VAE parameters changed during training");
      save_checkpoint(state, inv.out_dir);
      Checkpoint{state.params, vae, inv.config}.save(inv.out_dir);
      write_text(inv.out_dir / "train_log.tsv", log.str());
      inv.finish();
    };
  });

  // sample
  std::string input;
  std::uint64_t seed = kDefaultSeed;
  int steps = 0;
  bool export_intermediate = false, dump_latent = false;
  auto* samp = app.add_subcommand("sample", "Translate one SAR image");
  common(samp);
  samp->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  samp->add_option("--input", input, "SAR PGM (or four comma-separated HH,HV,VH,VV PGMs)")->required();
  samp->add_option("--seed", seed, "Noise seed");
  samp->add_option("--steps", steps, "Inference steps (default inference.steps)");
  samp->add_flag("--export-intermediate", export_intermediate, "Write decoded snapshots along the trajectory");
  samp->add_flag("--dump-latent", dump_latent, "Write the final latent as latent.ptf");
  samp->callback([&] {
    action = [&] {
      const Checkpoint ckpt = Checkpoint::load(checkpoint);
      inv.begin();
      inv.config = ckpt.config;
      std::vector<Tensor> channels;
      std::stringstream ss(input);
      for (std::string p; std::getline(ss, p, ',');) channels.push_back(read_pnm(p));
      ImageSample x{channels.size() == 1 ? channels.front() : concat(channels, 0), Modality::sar};
      SamplerConfig cfg;
      cfg.steps = steps ? steps : ckpt.config.inference_steps;
      cfg.seed = seed;
      cfg.export_intermediate = export_intermediate;
      const SampleResult r = sample_eo(x, ckpt.denoiser, ckpt.vae, ckpt.config.schedule(), cfg);
      write_pnm(inv.out_dir / "sample.ppm", r.image);
      for (const Snapshot& s : r.intermediates) {
        char name[64];
        std::snprintf(name, sizeof name, "intermediate_%03zu_t%04d.ppm", s.position, s.timestep);
        write_pnm(inv.out_dir / name, s.image);
      }
      if (dump_latent) write_ptf(inv.out_dir / "latent.ptf", r.latent);
      inv.finish();
    };
  });

  // confidence-map
  std::string pair_id;
  double t_frac = 0.5;
  auto* cmap = app.add_subcommand("confidence-map", "Confidence heat map for a dataset pair");
  common(cmap);
  cmap->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  cmap->add_option("--data", data, "Dataset directory or manifest")->required();
  cmap->add_option("--pair", pair_id, "Sample id")->required();
  cmap->add_option("--t-frac", t_frac, "Timestep as a fraction of T")->check(CLI::Range(0.0, 1.0));
  cmap->callback([&] {
    action = [&] {
      const Checkpoint ckpt = Checkpoint::load(checkpoint);
      inv.begin();
      inv.config = ckpt.config;
      const Manifest m = load_dataset(data);
      const PairedSample s = load_sample(m, m.find(pair_id), ckpt.config.sar_normalization);
      const NoiseSchedule schedule = ckpt.config.schedule();
      const int t = std::max(1, static_cast<int>(std::lround(t_frac * schedule.T())));
      const Tensor conf = confidence_map_at(s.sar, s.eo, t, ckpt.denoiser, ckpt.vae, schedule,
                                            sample_seed(ckpt.config.seed, s.id));
      write_ptf(inv.out_dir / "confidence.ptf", conf);
      float peak = 0.0f;
      for (float v : conf.data()) peak = std::max(peak, v);
      write_pnm(inv.out_dir / "confidence.pgm", upsample_map(peak > 0 ? mul_scalar(conf, 1.0f / peak) : conf));
      inv.finish();
    };
  });

  // sweep-steps
  std::string steps_list = "1,5,10,25,50";
  auto* sweep = app.add_subcommand("sweep-steps", "Metrics and timing across inference step counts");
  common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  sweep->add_option("--data", data, "Dataset directory or manifest")->required();
  sweep->add_option("--steps", steps_list, "Comma-separated step counts");
  sweep->add_option("--limit", limit, "Use at most this many test images");
  sweep->callback([&] {
    action = [&] {
      const Checkpoint ckpt = Checkpoint::load(checkpoint);
      inv.begin();
      inv.config = ckpt.config;
      std::vector<int> counts;
      for (double v : parse_list(steps_list, "--steps")) counts.push_back(static_cast<int>(v));
      auto test = load_split(load_dataset(data), Split::test, ckpt.config.sar_normalization);
      if (limit && test.size() > limit) test.resize(limit);
      const auto rows = sweep_inference_steps(test, ckpt.denoiser, ckpt.vae, ckpt.config.schedule(), counts,
                                              ckpt.config.seed);
      write_text(inv.out_dir / "sweep.tsv", sweep_to_tsv(rows));
      out << sweep_to_tsv(rows);
      inv.finish();
    };
  });

  // eval
  fs::path manifest_path;
  bool want_auroc = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest's test split");
  common(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--manifest", manifest_path, "Dataset manifest (or its directory)")->required();
  ev->add_flag("--confidence-auroc", want_auroc, "Also score confidence maps against masks");
  ev->add_option("--limit", limit, "Use at most this many test images");
  ev->add_option("--steps", steps, "Inference steps (default inference.steps)");
  ev->callback([&] {
    action = [&] {
      const Checkpoint ckpt = Checkpoint::load(checkpoint);
      inv.begin();
      inv.config = ckpt.config;
      EvalOptions opt;
      opt.steps = steps ? steps : ckpt.config.inference_steps;
      opt.seed = ckpt.config.seed;
      opt.confidence_auroc = want_auroc;
      opt.t_frac = ckpt.config.t_frac;
      opt.limit = limit;
      opt.norm = ckpt.config.sar_normalization;
      const MetricReport report = evaluate_manifest(load_dataset(manifest_path), ckpt, opt);
      write_text(inv.out_dir / "report.tsv", report.to_tsv());
      out << report.to_tsv();
      inv.finish();
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? e.what() : app.help()) << "\n";
      return 0;
    }
    err << "error\tusage\t" << one_line(e.what()) << "\n";
    return 2;
  }
  try {
    action();
  } catch (const UsageError& e) {
    err << "error\tusage\t" << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error\t" << category(e) << "\t" << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cdiff
