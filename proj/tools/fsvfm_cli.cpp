// fsvfm command-line driver: synth-data, pretrain, finetune, evaluate,
// analyze, mask-debug. Every command writes run_manifest.txt into its output
// directory before doing any work.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsvfm/analysis.hpp"
#include "fsvfm/downstream.hpp"
#include "fsvfm/errors.hpp"
#include "fsvfm/kv_config.hpp"
#include "fsvfm/masking.hpp"
#include "fsvfm/pretrainer.hpp"
#include "fsvfm/region_atlas.hpp"
#include "fsvfm/synth_data.hpp"

#ifndef FSVFM_SOURCE_HASH
#define FSVFM_SOURCE_HASH "unknown"
#endif

namespace fs = std::filesystem;
using namespace fsvfm;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path resolve_out(const std::string& flag, const char* command) {
  if (!flag.empty()) return flag;
  if (const char* root = std::getenv("FSVFM_OUT_DIR"); root && *root) return fs::path(root) / command;
  throw ConfigError("no output directory: pass --out or set FSVFM_OUT_DIR");
}

class RunManifest {
 public:
  RunManifest(const fs::path& out_dir, const std::string& command, const std::string& config_path,
              const KeyValues& config, std::uint64_t seed)
      : path_(out_dir / "run_manifest.txt") {
    fs::create_directories(out_dir);
    KeyValues kv;
    kv["command"] = command;
    kv["config_path"] = config_path.empty() ? "-" : config_path;
    kv["seed"] = std::to_string(seed);
    kv["source_hash"] = FSVFM_SOURCE_HASH;
    kv["output_dir"] = fs::absolute(out_dir).string();
    kv["started_at"] = utc_now();
    for (const auto& [k, v] : config) kv["config." + k] = v;
    std::ofstream out(path_, std::ios::trunc);
    out << format_key_values(kv);
    if (!out) throw StateError("cannot write " + path_.string());
  }
  void finish(const std::string& status) {
    std::ofstream out(path_, std::ios::app);
    out << "finished_at = " << utc_now() << "\nstatus = " << status << "\n";
  }

 private:
  fs::path path_;
};

std::vector<FaceSample> load_data_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--data is required");
  return load_dataset(dir, "manifest.tsv");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw StateError("cannot write " + path.string());
}

// --set key=value pairs, later ones win.
KeyValues parse_overrides(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

// Collects typed flags that were actually given on the command line.
struct FlagOverlay {
  std::vector<std::pair<CLI::Option*, std::string>> options;
  std::vector<std::string> sets;

  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, T& target, const std::string& help) {
    options.emplace_back(app->add_option(flag, target, help), key);
  }
  KeyValues resolve(const KeyValues& config) const {
    KeyValues kv = config;
    for (const auto& [opt, key] : options)
      if (opt->count() > 0) kv[key] = opt->as<std::string>();
    return merge_key_values(kv, parse_overrides(sets));
  }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int n_real = 64;
  int n_fake = 0;
  std::uint64_t seed = 0;
  int image_size = 64;
  int patch_size = 8;
  int frames_per_video = 1;
  std::string corruptions = "region_color_shift";
};

int run_synth(const SynthArgs& a) {
  const fs::path out = resolve_out(a.out, "synth-data");
  SynthConfig c;
  c.n_real = a.n_real;
  c.n_fake = a.n_fake;
  c.seed = a.seed;
  c.image_size = a.image_size;
  c.patch_size = a.patch_size;
  c.frames_per_video = a.frames_per_video;
  c.corruption_kinds.clear();
  std::stringstream ss(a.corruptions);
  for (std::string k; std::getline(ss, k, ',');)
    if (!k.empty()) c.corruption_kinds.push_back(parse_corruption(k));
  KeyValues snap{{"n_real", std::to_string(a.n_real)},        {"n_fake", std::to_string(a.n_fake)},
                 {"image_size", std::to_string(a.image_size)}, {"patch_size", std::to_string(a.patch_size)},
                 {"frames_per_video", std::to_string(a.frames_per_video)}, {"corruptions", a.corruptions}};
  RunManifest manifest(out, "synth-data", "", snap, a.seed);
  write_dataset(out, generate_synthetic(c));
  manifest.finish("ok");
  std::cout << "wrote " << (a.n_real + a.n_fake) << " samples to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string config, data, out, resume;
  std::string profile, strategy;
  double mask_ratio = 0;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, checkpoint_every = 0;
  std::int64_t max_steps = 0;
  FlagOverlay flags;
};

int run_pretrain(PretrainArgs& a) {
  const fs::path out = resolve_out(a.out, "pretrain");
  KeyValues base;
  if (!a.config.empty()) {
    base = read_key_values(a.config);
  } else if (!a.resume.empty()) {
    base = parse_key_values(read_checkpoint_file(a.resume).meta_at("config"));
    base.erase("max_steps");  // a stop point belongs to the invocation that set it
  }
  const PretrainConfig config = PretrainConfig::from_kv(a.flags.resolve(base));
  RunManifest manifest(out, a.resume.empty() ? "pretrain" : "pretrain --resume", a.config, config.to_kv(), config.seed);
  const auto samples = load_data_dir(a.data);
  const PretrainData data = prepare_pretrain_data(samples, config.vit());
  PretrainOptions opts;
  opts.out_dir = out;
  opts.resume_from = a.resume;
  opts.on_step = [](const LossReport& r) {
    if (r.step % 10 == 0) std::cout << format_loss_record(r) << "\n" << std::flush;
  };
  PretrainResult res = pretrain(data, config, opts);
  manifest.finish("ok");
  std::cout << "step " << res.final_step << " checkpoint " << res.last_checkpoint.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FinetuneArgs {
  std::string ckpt, data, out, config, mode, adapter_kind;
  int steps = 0, batch_size = 0;
  double lr = 0, lambda_rac = 0;
  std::uint64_t seed = 0;
  FlagOverlay flags;
};

int run_finetune(FinetuneArgs& a) {
  if (a.ckpt.empty()) throw ConfigError("--ckpt is required");
  const fs::path out = resolve_out(a.out, "finetune");
  KeyValues base = a.config.empty() ? KeyValues{} : read_key_values(a.config);
  const FinetuneConfig config = FinetuneConfig::from_kv(a.flags.resolve(base));
  RunManifest manifest(out, "finetune", a.config, config.to_kv(), config.seed);
  const auto train = load_data_dir(a.data);
  auto model = build_detector(load_backbone(fs::path(a.ckpt)), config);
  model->backbone_path = fs::absolute(a.ckpt);
  std::ofstream log(out / "finetune_log.tsv", std::ios::trunc);
  log << "step\ttask\trac\ttotal\n";
  FinetuneOptions opts;
  opts.on_step = [&](const LossReport& r) {
    log << r.step << "\t" << kv_format_double(r.task) << "\t" << kv_format_double(r.rac) << "\t"
        << kv_format_double(r.total) << "\n";
  };
  finetune(*model, train, opts);
  save_detector(out / "tuned.ckpt", *model);
  manifest.finish("ok");
  std::cout << "trainable " << model->tuned.trainable_scalar_count() + model->backbone->params.trainable_scalar_count()
            << " checkpoint " << (out / "tuned.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string ckpt, data, report, scores, backbone, dev_data, out;
  std::optional<double> threshold;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.ckpt.empty()) throw ConfigError("--ckpt is required");
  const fs::path report = a.report.empty() ? resolve_out(a.out, "evaluate") / "eval_report.txt" : fs::path(a.report);
  const fs::path out_dir = report.has_parent_path() ? report.parent_path() : fs::path(".");
  const fs::path scores_path = a.scores.empty() ? out_dir / "scores.tsv" : fs::path(a.scores);
  KeyValues snap{{"ckpt", a.ckpt}, {"data", a.data}, {"report", report.string()}, {"scores", scores_path.string()}};
  if (a.threshold) snap["threshold"] = kv_format_double(*a.threshold);
  if (!a.dev_data.empty()) snap["dev_data"] = a.dev_data;
  RunManifest manifest(out_dir, "evaluate", "", snap, 0);
  auto model = load_detector(a.ckpt, a.backbone);
  const auto test = load_data_dir(a.data);
  std::optional<double> threshold = a.threshold;
  if (!threshold && !a.dev_data.empty()) {
    const auto dev = load_data_dir(a.dev_data);
    threshold = eer_threshold(predict_scores(*model, dev), label_codes(dev)).threshold;
  }
  const auto scores = predict_scores(*model, test);
  const EvalResult r = evaluate_scores(scores, label_codes(test), group_ids(test), threshold);
  write_text(scores_path, format_scores(test, scores));
  write_text(report, format_key_values(r.to_kv()));
  manifest.finish("ok");
  std::cout << format_key_values(r.to_kv());
  return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string ckpt, data, out, backbone;
  int n = 8;
  int layer = -1;
};

int run_analyze(const AnalyzeArgs& a) {
  if (a.ckpt.empty()) throw ConfigError("--ckpt is required");
  const fs::path out = resolve_out(a.out, "analyze");
  KeyValues snap{{"ckpt", a.ckpt}, {"data", a.data}, {"n", std::to_string(a.n)}, {"layer", std::to_string(a.layer)}};
  RunManifest manifest(out, "analyze", "", snap, 0);
  const CheckpointFile ck = read_checkpoint_file(a.ckpt);
  std::unique_ptr<DetectorModel> detector;
  std::unique_ptr<Backbone> backbone;
  const VisionEncoder* encoder = nullptr;
  const ImageNormalization* norm = nullptr;
  BlockHook hook;
  if (ck.meta_at("kind") == "pretrain") {
    backbone = load_backbone(ck);
    encoder = backbone->encoder.get();
    norm = &backbone->norm;
  } else {
    detector = load_detector(a.ckpt, a.backbone);
    encoder = detector->backbone->encoder.get();
    norm = &detector->backbone->norm;
    if (detector->adapter) hook = detector->adapter->hook();
  }
  const auto samples = load_data_dir(a.data);
  const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(std::max(a.n, 1)));
  const ViTProfile& p = encoder->profile();
  std::vector<Matrix> patches;
  for (std::size_t i = 0; i < n; ++i) patches.push_back(image_to_patches(samples[i].image, p, *norm));
  const AttentionTrace trace = capture_attention(*encoder, patches, hook ? &hook : nullptr);
  const AttentionSummary summary = summarize_attention(trace, p.grid(), p.patch_size);
  write_text(out / "attention_summary.tsv", summary.to_tsv());
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix mass = attention_mass(trace, a.layer, static_cast<int>(i), p.grid());
    const Heatmap h = render_heatmap(mass, samples[i].image);
    fs::create_directories(out / "heatmaps");
    write_ppm(out / "heatmaps" / (samples[i].sample_id + ".ppm"), h.overlay);
    std::string grid;
    for (Index r = 0; r < mass.rows(); ++r) {
      for (Index c = 0; c < mass.cols(); ++c) grid += (c ? "\t" : "") + kv_format_double(mass(r, c));
      grid += "\n";
    }
    write_text(out / "heatmaps" / (samples[i].sample_id + ".tsv"), grid);
  }
  manifest.finish("ok");
  std::cout << summary.to_tsv();
  return 0;
}

// ---------------------------------------------------------------------------

struct MaskDebugArgs {
  std::string data, out, strategy = "crfr_p";
  double ratio = 0.75;
  int n = 16;
  int patch_size = 8;
  std::uint64_t seed = 0;
};

int run_mask_debug(const MaskDebugArgs& a) {
  const fs::path out = resolve_out(a.out, "mask-debug");
  const MaskStrategy strategy = parse_strategy(a.strategy);
  KeyValues snap{{"data", a.data},
                 {"strategy", a.strategy},
                 {"r", kv_format_double(a.ratio)},
                 {"n", std::to_string(a.n)},
                 {"patch_size", std::to_string(a.patch_size)}};
  RunManifest manifest(out, "mask-debug", "", snap, a.seed);
  const auto samples = load_data_dir(a.data);
  const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(std::max(a.n, 0)));
  fs::create_directories(out / "masks");
  std::string audit = "sample_id\tn_patches\tbudget\tmasked\tbudget_deviation\tselected_region\textreme\tregion_masked\t"
                      "proportionality_violations\tmax_share_deviation\tok\n";
  int worst = 0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const PatchRegionIndex index = patchify_parsing(samples[i].parsing, a.patch_size);
    Rng rng = Rng::derive(a.seed, "mask", {static_cast<std::uint64_t>(i)});
    const MaskPair pair = sample_mask(strategy, index, a.ratio, rng);
    const MaskAudit au = audit_mask(strategy, index, a.ratio, pair);
    const auto bytes = pack_mask(pair);
    std::ofstream(out / "masks" / (samples[i].sample_id + ".mask"), std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    worst = std::max(worst, au.budget_deviation);
    failures += au.ok() ? 0 : 1;
    audit += samples[i].sample_id + "\t" + std::to_string(index.n_patches()) + "\t" + std::to_string(au.budget) + "\t" +
             std::to_string(au.masked) + "\t" + std::to_string(au.budget_deviation) + "\t" +
             (pair.selected_region ? region_name(*pair.selected_region) : "-") + "\t" +
             (pair.extreme_case ? "1" : "0") + "\t" + std::to_string(pair.region_masked_count()) + "\t" +
             std::to_string(au.proportionality_violations) + "\t" + kv_format_double(au.max_share_deviation) + "\t" +
             (au.ok() ? "1" : "0") + "\n";
  }
  write_text(out / "mask_audit.tsv", audit);
  KeyValues report{{"strategy", a.strategy},
                   {"r", kv_format_double(a.ratio)},
                   {"samples", std::to_string(n)},
                   {"max_budget_deviation", std::to_string(worst)},
                   {"failed_samples", std::to_string(failures)},
                   {"ok", failures == 0 ? "true" : "false"}};
  write_text(out / "mask_report.txt", format_key_values(report));
  manifest.finish(failures == 0 ? "ok" : "audit_failed");
  std::cout << format_key_values(report);
  if (failures != 0) throw PreconditionError(std::to_string(failures) + " mask draws failed the audit");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fsvfm: facial masked-image pre-training, adapter tuning and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate a synthetic face dataset");
  s->add_option("--out", synth.out, "Dataset directory");
  s->add_option("--n-real", synth.n_real, "Number of real faces");
  s->add_option("--n-fake", synth.n_fake, "Number of corrupted faces");
  s->add_option("--seed", synth.seed, "Seed");
  s->add_option("--image-size", synth.image_size, "Image side in pixels");
  s->add_option("--patch-size", synth.patch_size, "Patch side in pixels");
  s->add_option("--frames-per-video", synth.frames_per_video, "Frames per video group");
  s->add_option("--corruptions", synth.corruptions, "Comma-separated corruption kinds");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Joint MIM + instance-discrimination pre-training");
  p->add_option("--config", pre.config, "key = value config file");
  p->add_option("--data", pre.data, "Dataset directory")->required();
  p->add_option("--out", pre.out, "Output directory");
  p->add_option("--resume", pre.resume, "Checkpoint to resume from");
  pre.flags.add(p, "--seed", "seed", pre.seed, "Seed");
  pre.flags.add(p, "--profile", "profile", pre.profile, "ViT profile");
  pre.flags.add(p, "--strategy", "mask_strategy", pre.strategy, "Mask strategy");
  pre.flags.add(p, "--mask-ratio", "mask_ratio", pre.mask_ratio, "Mask ratio r");
  pre.flags.add(p, "--epochs", "epochs", pre.epochs, "Epochs");
  pre.flags.add(p, "--batch-size", "batch_size", pre.batch_size, "Batch size");
  pre.flags.add(p, "--max-steps", "max_steps", pre.max_steps, "Stop after this many steps");
  pre.flags.add(p, "--checkpoint-every", "checkpoint_every", pre.checkpoint_every, "Checkpoint period in steps");
  p->add_option("--set", pre.flags.sets, "Override any config key (key=value)");

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Tune a detector on a pre-trained backbone");
  f->add_option("--ckpt", ft.ckpt, "Pre-training checkpoint")->required();
  f->add_option("--data", ft.data, "Labelled dataset directory")->required();
  f->add_option("--out", ft.out, "Output directory");
  f->add_option("--config", ft.config, "key = value config file");
  ft.flags.add(f, "--mode", "mode", ft.mode, "full | adapter | linear");
  ft.flags.add(f, "--adapter-kind", "adapter_kind", ft.adapter_kind, "Adapter kind");
  ft.flags.add(f, "--steps", "steps", ft.steps, "Optimizer steps");
  ft.flags.add(f, "--batch-size", "batch_size", ft.batch_size, "Batch size");
  ft.flags.add(f, "--lr", "lr", ft.lr, "Peak learning rate");
  ft.flags.add(f, "--lambda-rac", "lambda_rac", ft.lambda_rac, "Contrastive weight");
  ft.flags.add(f, "--seed", "seed", ft.seed, "Seed");
  f->add_option("--set", ft.flags.sets, "Override any config key (key=value)");

  EvaluateArgs ev;
  double threshold = 0;
  auto* e = app.add_subcommand("evaluate", "Score a dataset and report AUC / HTER / EER");
  e->add_option("--ckpt", ev.ckpt, "Tuned checkpoint")->required();
  e->add_option("--data", ev.data, "Test dataset directory")->required();
  e->add_option("--report", ev.report, "Report path");
  e->add_option("--scores", ev.scores, "Scores path (default: next to the report)");
  e->add_option("--out", ev.out, "Output directory when --report is not given");
  e->add_option("--backbone", ev.backbone, "Override the backbone checkpoint path");
  e->add_option("--dev-data", ev.dev_data, "Development set for the HTER threshold");
  auto* thr = e->add_option("--threshold", threshold, "Fixed HTER threshold");

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "Attention distance / head diversity / heatmaps");
  z->add_option("--ckpt", an.ckpt, "Pre-training or tuned checkpoint")->required();
  z->add_option("--data", an.data, "Dataset directory")->required();
  z->add_option("--out", an.out, "Output directory");
  z->add_option("--backbone", an.backbone, "Override the backbone checkpoint path");
  z->add_option("--n", an.n, "Number of samples");
  z->add_option("--layer", an.layer, "Heatmap layer (negative from the end)");

  MaskDebugArgs md;
  auto* m = app.add_subcommand("mask-debug", "Dump masks and audit budgets / proportionality");
  m->add_option("--data", md.data, "Dataset directory")->required();
  m->add_option("--out", md.out, "Output directory");
  m->add_option("--strategy", md.strategy, "Mask strategy");
  m->add_option("--r", md.ratio, "Mask ratio");
  m->add_option("--n", md.n, "Number of samples");
  m->add_option("--patch-size", md.patch_size, "Patch side in pixels");
  m->add_option("--seed", md.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() != 0) std::cerr << "error\tusage\t" << err.what() << "\n";
    return app.exit(err);
  }

  try {
    if (*s) return run_synth(synth);
    if (*p) return run_pretrain(pre);
    if (*f) return run_finetune(ft);
    if (*e) {
      if (thr->count() > 0) ev.threshold = threshold;
      return run_evaluate(ev);
    }
    if (*z) return run_analyze(an);
    if (*m) return run_mask_debug(md);
  } catch (const Error& err) {
    std::cerr << "error\t" << err.kind() << "\t" << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error\tinternal\t" << err.what() << "\n";
    return 3;
  }
  return 1;
}
