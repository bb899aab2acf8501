#include "fsvfm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fsvfm/errors.hpp"
#include "fsvfm/optim.hpp"
#include "fsvfm/pretrainer.hpp"

namespace fsvfm {

const char* tune_mode_name(TuneMode m) {
  switch (m) {
    case TuneMode::full: return "full";
    case TuneMode::adapter: return "adapter";
    case TuneMode::linear_probe: return "linear_probe";
  }
  return "unknown";
}

TuneMode parse_tune_mode(const std::string& name) {
  if (name == "full") return TuneMode::full;
  if (name == "adapter") return TuneMode::adapter;
  if (name == "linear_probe" || name == "linear") return TuneMode::linear_probe;
  throw ConfigError("unknown tuning mode '" + name + "'");
}

LinearHead::LinearHead(ParameterSet& ps, const std::string& prefix, const HeadConfig& config, Rng& init) {
  if (config.input_dim < 1 || config.classes < 2) throw ConfigError("head needs input_dim >= 1 and classes >= 2");
  Matrix w(config.input_dim, config.classes);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = init.truncated_normal(config.init_std);
  weight = ps.add(prefix + ".weight", std::move(w), true);
  bias = ps.add(prefix + ".bias", Matrix::Zero(1, config.classes), false);
  input_scale = ps.add(prefix + ".input_scale", Matrix::Ones(1, config.input_dim), false, false);
  input_shift = ps.add(prefix + ".input_shift", Matrix::Zero(1, config.input_dim), false, false);
}

ag::Tensor LinearHead::forward(const ag::Tensor& x) const {
  const Matrix diag = input_scale.value().row(0).asDiagonal();
  return ag::linear(ag::linear(x, ag::constant(diag), input_shift), weight, bias);
}

void LinearHead::calibrate(const Matrix& inputs) {
  if (inputs.cols() != input_scale.cols() || inputs.rows() < 2) throw ShapeError("head calibration needs >= 2 input rows");
  const Matrix mean = inputs.colwise().mean();
  const Matrix centered = inputs.rowwise() - mean.row(0);
  const Matrix sd = (centered.array().square().colwise().sum() / static_cast<double>(inputs.rows() - 1)).sqrt();
  Matrix& scale = input_scale.mutable_value();
  Matrix& shift = input_shift.mutable_value();
  for (Index j = 0; j < inputs.cols(); ++j) {
    const bool constant = sd(0, j) <= 1e-9 * std::max(1.0, std::abs(mean(0, j)));
    scale(0, j) = constant ? 1.0 : 1.0 / sd(0, j);
    shift(0, j) = constant ? 0.0 : -mean(0, j) * scale(0, j);
  }
}

// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<Backbone> empty_backbone(const ViTProfile& profile, const ImageNormalization& norm) {
  auto b = std::make_unique<Backbone>();
  b->profile = profile;
  b->norm = norm;
  Rng scratch(0);
  b->encoder = std::make_unique<VisionEncoder>(b->params, "encoder", profile, scratch);
  return b;
}

void load_into(ParameterSet& ps, const CheckpointFile& ck, const std::string& prefix, const std::string& strip = "") {
  for (auto& p : ps.all()) {
    const std::string key = prefix + p.name.substr(strip.size());
    const Matrix& v = ck.at(key);
    if (v.rows() != p.tensor.rows() || v.cols() != p.tensor.cols())
      throw StateError("checkpoint tensor " + key + " has the wrong shape");
    p.tensor.mutable_value() = v;
  }
}

}  // namespace

std::unique_ptr<Backbone> load_backbone(const CheckpointFile& ck) {
  if (ck.meta_at("kind") != "pretrain") throw StateError("backbone must come from a pre-training checkpoint");
  ImageNormalization norm;
  norm.mean = kv_triplet("norm_mean", ck.meta_at("norm_mean"));
  norm.std = kv_triplet("norm_std", ck.meta_at("norm_std"));
  auto b = empty_backbone(profile_from_kv(parse_key_values(ck.meta_at("profile"))), norm);
  load_into(b->params, ck, "online.");
  b->config_hash = ck.meta_at("config_hash");
  b->params_hash = b->params.hash();
  return b;
}

std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& path) {
  return load_backbone(read_checkpoint_file(path));
}

// ---------------------------------------------------------------------------

KeyValues FinetuneConfig::to_kv() const {
  KeyValues kv;
  kv["mode"] = tune_mode_name(mode);
  kv["adapter_kind"] = adapter_kind_name(adapter.kind);
  kv["bottleneck"] = std::to_string(adapter.bottleneck);
  kv["fusion"] = fusion_name(adapter.fusion);
  kv["tau_rac"] = kv_format_double(adapter.tau_rac);
  kv["lambda_rac"] = kv_format_double(adapter.lambda_rac);
  kv["adapter_scale"] = kv_format_double(adapter.scale);
  kv["steps"] = std::to_string(steps);
  kv["batch_size"] = std::to_string(batch_size);
  kv["lr"] = kv_format_double(lr);
  kv["weight_decay"] = kv_format_double(weight_decay);
  kv["warmup_frac"] = kv_format_double(warmup_frac);
  kv["seed"] = std::to_string(seed);
  return kv;
}

FinetuneConfig FinetuneConfig::from_kv(const KeyValues& kv) {
  FinetuneConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "mode") c.mode = parse_tune_mode(v);
    else if (k == "adapter_kind") c.adapter.kind = parse_adapter_kind(v);
    else if (k == "bottleneck") c.adapter.bottleneck = kv_int(k, v);
    else if (k == "fusion") c.adapter.fusion = parse_fusion(v);
    else if (k == "tau_rac") c.adapter.tau_rac = kv_double(k, v);
    else if (k == "lambda_rac") c.adapter.lambda_rac = kv_double(k, v);
    else if (k == "adapter_scale") c.adapter.scale = kv_double(k, v);
    else if (k == "steps") c.steps = kv_int(k, v);
    else if (k == "batch_size") c.batch_size = kv_int(k, v);
    else if (k == "lr") c.lr = kv_double(k, v);
    else if (k == "weight_decay") c.weight_decay = kv_double(k, v);
    else if (k == "warmup_frac") c.warmup_frac = kv_double(k, v);
    else if (k == "seed") c.seed = kv_uint64(k, v);
    else throw ConfigError("unknown finetune config key '" + k + "'");
  }
  if (c.steps < 0 || c.batch_size < 1) throw ConfigError("finetune needs steps >= 0 and batch_size >= 1");
  if (c.lr < 0 || c.weight_decay < 0) throw ConfigError("finetune lr and weight_decay must be non-negative");
  if (c.warmup_frac < 0 || c.warmup_frac >= 1) throw ConfigError("warmup_frac must lie in [0, 1)");
  return c;
}

std::uint64_t FinetuneConfig::hash() const { return fnv1a64(format_key_values(to_kv())); }

// ---------------------------------------------------------------------------

DetectorModel::Output DetectorModel::forward_tokens(const ag::Tensor& tokens, Index off) const {
  Output out;
  if (adapter) {
    auto f = adapter->features(tokens, off);
    out.logits = head->forward(f.head_input);
    out.f_p = f.f_p;
  } else {
    out.logits = head->forward(ag::mean_rows(tokens, off, tokens.rows()));
  }
  return out;
}

ag::Tensor DetectorModel::head_input(const ag::Tensor& tokens, Index off) const {
  return adapter ? adapter->features(tokens, off).head_input : ag::mean_rows(tokens, off, tokens.rows());
}

TokenSet DetectorModel::encode(const Matrix& patches, std::vector<std::vector<Matrix>>* capture) const {
  const VisionEncoder& enc = *backbone->encoder;
  BlockHook hook;
  if (adapter) hook = adapter->hook();
  return enc.encode(enc.embed_full(patches), capture, hook ? &hook : nullptr);
}

DetectorModel::Output DetectorModel::forward(const Matrix& patches) const {
  TokenSet z = encode(patches);
  return forward_tokens(z.tokens, z.patch_row_begin());
}

std::unique_ptr<DetectorModel> build_detector(std::unique_ptr<Backbone> backbone, const FinetuneConfig& config) {
  auto m = std::make_unique<DetectorModel>();
  m->config = config;
  m->backbone = std::move(backbone);
  const ViTProfile& p = m->backbone->profile;
  Rng init = Rng::derive(config.seed, "init", {1});
  HeadConfig head;
  head.input_dim = p.embed_dim;
  if (config.mode == TuneMode::adapter) {
    m->adapter = std::make_unique<AdapterModule>(m->tuned, config.adapter, p.embed_dim, p.depth, init);
    head.input_dim = head_input_dim(config.adapter, p.embed_dim);
  }
  m->head = std::make_unique<LinearHead>(m->tuned, "head", head, init);
  m->backbone->params.set_trainable(config.mode == TuneMode::full);
  return m;
}

namespace {

int label_code(const FaceSample& s) {
  if (!s.label) throw PreconditionError("sample " + s.sample_id + " has no label");
  return *s.label == Label::fake ? 1 : 0;
}

// Frozen backbone without per-block adapters: encoder tokens never change.
bool tokens_cacheable(const DetectorModel& m) {
  return m.config.mode == TuneMode::linear_probe || (m.adapter && m.adapter->config().last_only());
}

}  // namespace

std::vector<LossReport> finetune(DetectorModel& model, const std::vector<FaceSample>& train,
                                 const FinetuneOptions& options) {
  if (train.empty()) throw PreconditionError("finetune needs training samples");
  const FinetuneConfig& c = model.config;
  const ViTProfile& profile = model.backbone->profile;
  std::vector<Matrix> patches;
  std::vector<int> labels;
  for (const auto& s : train) {
    patches.push_back(image_to_patches(s.image, profile, model.backbone->norm));
    labels.push_back(label_code(s));
  }
  const bool cache = tokens_cacheable(model);
  std::vector<Matrix> cached;
  Index off = profile.use_cls_token ? 1 : 0;
  if (cache)
    for (const auto& p : patches) cached.push_back(model.encode(p).tokens.value());
  if (train.size() >= 2) {
    const std::size_t n = train.size();
    // head-input statistics of the untrained adapter/head over the training set
    Matrix inputs(static_cast<Index>(n), model.head->input_scale.cols());
    for (std::size_t i = 0; i < n; ++i) {
      const ag::Tensor x = cache ? model.head_input(ag::constant(cached[i]), off)
                                 : model.head_input(ag::constant(model.encode(patches[i]).tokens.value()), off);
      inputs.row(static_cast<Index>(i)) = x.value().row(0);
    }
    model.head->calibrate(inputs);
  }

  AdamWConfig oc;
  oc.weight_decay = c.weight_decay;
  AdamW optim(oc);
  const std::size_t n = train.size();
  const auto b = static_cast<std::size_t>(c.batch_size);
  const auto spe = static_cast<std::int64_t>((n + b - 1) / b);
  const auto warmup = static_cast<std::int64_t>(std::llround(c.warmup_frac * c.steps));
  const bool contrast = model.adapter && model.adapter->config().contrast_source() != ContrastSource::none &&
                        c.adapter.lambda_rac > 0;
  std::vector<LossReport> reports;
  std::vector<int> order;
  for (std::int64_t step = 0; step < c.steps; ++step) {
    const std::int64_t epoch = step / spe;
    if (step % spe == 0) order = epoch_order(c.seed, epoch, n);
    const std::size_t begin = static_cast<std::size_t>(step % spe) * b;
    std::vector<ag::Tensor> logits, feats;
    std::vector<int> batch_labels;
    std::vector<Label> batch_kinds;
    for (std::size_t k = begin; k < std::min(n, begin + b); ++k) {
      const auto i = static_cast<std::size_t>(order[k]);
      DetectorModel::Output o;
      if (cache) {
        o = model.forward_tokens(ag::constant(cached[i]), off);
      } else {
        TokenSet z = model.encode(patches[i]);
        o = model.forward_tokens(z.tokens, z.patch_row_begin());
      }
      logits.push_back(o.logits);
      if (o.f_p.defined()) feats.push_back(o.f_p);
      batch_labels.push_back(labels[i]);
      batch_kinds.push_back(labels[i] ? Label::fake : Label::real);
    }
    ag::Tensor task = ag::cross_entropy(ag::concat_rows(logits), batch_labels);
    LossReport r;
    r.step = step + 1;
    r.epoch = epoch;
    r.task = task.item();
    ag::Tensor total = task;
    if (contrast) {
      ag::Tensor fp = ag::concat_rows(feats);
      ag::Tensor cl = c.adapter.kind == AdapterKind::variant2_scl ? loss_scl_variant(fp, batch_kinds, c.adapter.tau_rac)
                                                                  : loss_rac(fp, batch_kinds, c.adapter.tau_rac);
      r.rac = cl.item();
      total = ag::weighted_sum({task, cl}, {1.0, c.adapter.lambda_rac});
    }
    r.total = total.item();
    if (!std::isfinite(r.total)) throw TrainingError("non-finite finetune loss at step " + std::to_string(r.step));
    model.tuned.zero_grad();
    model.backbone->params.zero_grad();
    ag::backward(total);
    const double lr = cosine_lr(c.lr, 0.0, step, warmup, c.steps);
    optim.step(model.tuned, lr);
    if (c.mode == TuneMode::full) optim.step(model.backbone->params, lr);
    reports.push_back(r);
    if (options.on_step) options.on_step(r);
  }
  if (c.mode != TuneMode::full) {
    for (const auto& p : model.backbone->params.all())
      if (p.tensor.has_grad()) throw StateError("frozen backbone parameter " + p.name + " received a gradient");
    if (model.backbone->params.hash() != model.backbone->params_hash)
      throw StateError("frozen backbone changed during tuning");
  }
  model.tuned.zero_grad();
  model.backbone->params.zero_grad();
  return reports;
}

// ---------------------------------------------------------------------------

CheckpointFile detector_checkpoint(const DetectorModel& m) {
  CheckpointFile ck;
  ck.meta["kind"] = "finetune";
  ck.meta["finetune_config"] = format_key_values(m.config.to_kv());
  ck.meta["profile"] = format_key_values(profile_to_kv(m.backbone->profile));
  ck.meta["norm_mean"] = kv_format_triplet(m.backbone->norm.mean);
  ck.meta["norm_std"] = kv_format_triplet(m.backbone->norm.std);
  ck.meta["backbone_config_hash"] = m.backbone->config_hash;
  ck.meta["backbone_params_hash"] = kv_hex64(m.backbone->params_hash);
  ck.meta["backbone_path"] = m.backbone_path.string();
  for (const auto& p : m.tuned.all()) ck.put("tuned." + p.name, p.tensor.value());
  if (m.config.mode == TuneMode::full)
    for (const auto& p : m.backbone->params.all()) ck.put("backbone." + p.name, p.tensor.value());
  return ck;
}

void save_detector(const std::filesystem::path& path, const DetectorModel& model) {
  write_checkpoint_file(path, detector_checkpoint(model));
}

std::unique_ptr<DetectorModel> load_detector(const std::filesystem::path& path,
                                             const std::filesystem::path& backbone_override) {
  const CheckpointFile ck = read_checkpoint_file(path);
  if (ck.meta_at("kind") != "finetune") throw StateError(path.string() + " is not a tuned checkpoint");
  const auto config = FinetuneConfig::from_kv(parse_key_values(ck.meta_at("finetune_config")));
  std::unique_ptr<Backbone> backbone;
  std::filesystem::path bpath = backbone_override.empty() ? std::filesystem::path(ck.meta_at("backbone_path"))
                                                          : backbone_override;
  if (config.mode == TuneMode::full) {
    ImageNormalization norm;
    norm.mean = kv_triplet("norm_mean", ck.meta_at("norm_mean"));
    norm.std = kv_triplet("norm_std", ck.meta_at("norm_std"));
    backbone = empty_backbone(profile_from_kv(parse_key_values(ck.meta_at("profile"))), norm);
    load_into(backbone->params, ck, "backbone.");
    backbone->config_hash = ck.meta_at("backbone_config_hash");
    backbone->params_hash = backbone->params.hash();
  } else {
    if (bpath.is_relative() && !std::filesystem::exists(bpath)) bpath = path.parent_path() / bpath;
    backbone = load_backbone(bpath);
    if (kv_hex64(backbone->params_hash) != ck.meta_at("backbone_params_hash"))
      throw StateError("backbone " + bpath.string() + " does not match the one this checkpoint was tuned on");
  }
  auto m = build_detector(std::move(backbone), config);
  m->backbone_path = bpath;
  load_into(m->tuned, ck, "tuned.");
  return m;
}

std::vector<double> predict_scores(const DetectorModel& model, const std::vector<FaceSample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Matrix logits = model.forward(image_to_patches(s.image, model.backbone->profile, model.backbone->norm)).logits.value();
    out.push_back(ag::softmax_rows(logits)(0, 1));
  }
  return out;
}

std::vector<Matrix> contrast_features(const DetectorModel& model, const std::vector<FaceSample>& samples) {
  std::vector<Matrix> out;
  for (const auto& s : samples) {
    auto o = model.forward(image_to_patches(s.image, model.backbone->profile, model.backbone->norm));
    if (!o.f_p.defined()) throw StateError("model has no contrastive projection");
    out.push_back(o.f_p.value());
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics

namespace {
void check_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw PreconditionError("one label per score required");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw PreconditionError("labels must be 0 (real) or 1 (fake)");
    pos += static_cast<std::size_t>(l);
  }
  if (pos == 0 || pos == labels.size()) throw PreconditionError("metrics need both real and fake samples");
}
}  // namespace

double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double sum_pos = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      sum_pos += rank[i];
      n_pos += 1.0;
    }
  const double n_neg = static_cast<double>(n) - n_pos;
  return (sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

namespace {
struct GroupScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

GroupScores aggregate_groups(const std::vector<double>& scores, const std::vector<int>& labels,
                             const std::vector<std::string>& groups) {
  if (groups.size() != scores.size()) throw PreconditionError("one group id per score required");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& a = acc[groups[i]];
    a.first += scores[i];
    ++a.second;
    auto [it, inserted] = label_of.emplace(groups[i], labels[i]);
    if (!inserted && it->second != labels[i]) throw PreconditionError("group " + groups[i] + " mixes real and fake frames");
  }
  GroupScores g;
  for (const auto& [id, a] : acc) {
    g.scores.push_back(a.first / static_cast<double>(a.second));
    g.labels.push_back(label_of[id]);
  }
  return g;
}
}  // namespace

double video_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<std::string>& groups) {
  GroupScores g = aggregate_groups(scores, labels, groups);
  return frame_auc(g.scores, g.labels);
}

ErrorRates error_rates(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  check_binary(scores, labels);
  double reals = 0, fakes = 0, false_accept = 0, false_reject = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (labels[i] == 1) {
      fakes += 1;
      false_reject += flagged ? 0 : 1;
    } else {
      reals += 1;
      false_accept += flagged ? 1 : 0;
    }
  }
  return {false_accept / reals, false_reject / fakes};
}

double hter(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  const ErrorRates e = error_rates(scores, labels, threshold);
  return (e.far + e.frr) / 2.0;
}

EerPoint eer_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  std::vector<double> cands(scores);
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  cands.push_back(std::nextafter(cands.back(), INFINITY));
  EerPoint best;
  double best_gap = INFINITY;
  for (double t : cands) {
    const ErrorRates e = error_rates(scores, labels, t);
    const double gap = std::abs(e.far - e.frr);
    if (gap < best_gap) {
      best_gap = gap;
      best.threshold = t;
      best.eer = (e.far + e.frr) / 2.0;
    }
  }
  return best;
}

KeyValues EvalResult::to_kv() const {
  KeyValues kv;
  kv["frame_auc"] = kv_format_double(frame_auc);
  kv["video_auc"] = kv_format_double(video_auc);
  kv["hter"] = kv_format_double(hter);
  kv["eer"] = kv_format_double(eer);
  kv["threshold"] = kv_format_double(threshold);
  kv["n_frames"] = std::to_string(n_frames);
  kv["n_videos"] = std::to_string(n_videos);
  return kv;
}

std::vector<int> label_codes(const std::vector<FaceSample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(label_code(s));
  return out;
}

std::vector<std::string> group_ids(const std::vector<FaceSample>& samples) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.group_id.value_or(s.sample_id));
  return out;
}

EvalResult evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& groups, std::optional<double> threshold) {
  EvalResult r;
  r.frame_auc = frame_auc(scores, labels);
  const GroupScores g = aggregate_groups(scores, labels, groups);
  r.video_auc = frame_auc(g.scores, g.labels);
  const EerPoint e = eer_threshold(scores, labels);
  r.eer = e.eer;
  r.threshold = threshold.value_or(e.threshold);
  r.hter = hter(scores, labels, r.threshold);
  r.n_frames = static_cast<std::int64_t>(scores.size());
  r.n_videos = static_cast<std::int64_t>(g.scores.size());
  return r;
}

std::string format_scores(const std::vector<FaceSample>& samples, const std::vector<double>& scores) {
  if (samples.size() != scores.size()) throw PreconditionError("one score per sample required");
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out += s.sample_id + "\t" + s.group_id.value_or(s.sample_id) + "\t" + (s.label ? label_name(*s.label) : "unknown") +
           "\t" + kv_format_double(scores[i]) + "\n";
  }
  return out;
}

}  // namespace fsvfm
