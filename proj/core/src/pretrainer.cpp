#include "fsvfm/pretrainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fsvfm/errors.hpp"
#include "fsvfm/mim.hpp"

namespace fsvfm {

namespace {

const char* const kRunControlKeys[] = {"checkpoint_every", "max_steps"};

}  // namespace

// ---------------------------------------------------------------------------
// config

KeyValues PretrainConfig::to_kv() const {
  KeyValues kv;
  kv["profile"] = profile;
  kv["mask_strategy"] = strategy_name(mask_strategy);
  kv["mask_ratio"] = kv_format_double(mask_ratio);
  kv["lambda_fr"] = kv_format_double(lambda_fr);
  kv["lambda_cl"] = kv_format_double(lambda_cl);
  kv["id_enabled"] = id_enabled ? "true" : "false";
  kv["target_view"] = target_view_name(target_view);
  kv["id_loss"] = id_loss_name(id_loss);
  kv["infonce_temperature"] = kv_format_double(infonce_temperature);
  kv["proj_hidden"] = std::to_string(proj_hidden);
  kv["proj_out"] = std::to_string(proj_out);
  kv["pred_hidden"] = std::to_string(pred_hidden);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["base_lr"] = kv_format_double(base_lr);
  kv["min_lr"] = kv_format_double(min_lr);
  kv["warmup_epochs"] = kv_format_double(warmup_epochs);
  kv["weight_decay"] = kv_format_double(weight_decay);
  kv["beta1"] = kv_format_double(beta1);
  kv["beta2"] = kv_format_double(beta2);
  kv["ema_tau_base"] = kv_format_double(ema_tau_base);
  kv["seed"] = std::to_string(seed);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["max_steps"] = std::to_string(max_steps);
  return kv;
}

PretrainConfig PretrainConfig::from_kv(const KeyValues& kv) {
  PretrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "profile") c.profile = v;
    else if (k == "mask_strategy") c.mask_strategy = parse_strategy(v);
    else if (k == "mask_ratio") c.mask_ratio = kv_double(k, v);
    else if (k == "lambda_fr") c.lambda_fr = kv_double(k, v);
    else if (k == "lambda_cl") c.lambda_cl = kv_double(k, v);
    else if (k == "id_enabled") c.id_enabled = kv_bool(k, v);
    else if (k == "target_view") c.target_view = parse_target_view(v);
    else if (k == "id_loss") c.id_loss = parse_id_loss(v);
    else if (k == "infonce_temperature") c.infonce_temperature = kv_double(k, v);
    else if (k == "proj_hidden") c.proj_hidden = kv_int(k, v);
    else if (k == "proj_out") c.proj_out = kv_int(k, v);
    else if (k == "pred_hidden") c.pred_hidden = kv_int(k, v);
    else if (k == "epochs") c.epochs = kv_int(k, v);
    else if (k == "batch_size") c.batch_size = kv_int(k, v);
    else if (k == "base_lr") c.base_lr = kv_double(k, v);
    else if (k == "min_lr") c.min_lr = kv_double(k, v);
    else if (k == "warmup_epochs") c.warmup_epochs = kv_double(k, v);
    else if (k == "weight_decay") c.weight_decay = kv_double(k, v);
    else if (k == "beta1") c.beta1 = kv_double(k, v);
    else if (k == "beta2") c.beta2 = kv_double(k, v);
    else if (k == "ema_tau_base") c.ema_tau_base = kv_double(k, v);
    else if (k == "seed") c.seed = kv_uint64(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = kv_int(k, v);
    else if (k == "max_steps") c.max_steps = kv_int64(k, v);
    else throw ConfigError("unknown pretrain config key '" + k + "'");
  }
  c.validate();
  return c;
}

std::uint64_t PretrainConfig::hash() const {
  KeyValues kv = to_kv();
  for (const char* k : kRunControlKeys) kv.erase(k);
  return fnv1a64(format_key_values(kv));
}

void PretrainConfig::validate() const {
  vit().validate();
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (lambda_fr < 0 || lambda_cl < 0) throw ConfigError("loss weights must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (base_lr < 0 || min_lr < 0) throw ConfigError("learning rates must be non-negative");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  if (!(ema_tau_base >= 0.0 && ema_tau_base <= 1.0)) throw ConfigError("ema_tau_base must lie in [0, 1]");
  if (proj_hidden < 1 || proj_out < 1 || pred_hidden < 1) throw ConfigError("head widths must be positive");
  if (infonce_temperature <= 0) throw ConfigError("infonce_temperature must be positive");
  if (checkpoint_every < 0 || max_steps < 0) throw ConfigError("run-control knobs must be non-negative");
}

ViTProfile PretrainConfig::vit() const { return ViTProfile::from_name(profile); }

IdConfig PretrainConfig::id() const {
  IdConfig c;
  c.proj_hidden = proj_hidden;
  c.proj_out = proj_out;
  c.pred_hidden = pred_hidden;
  c.loss = id_loss;
  c.view = target_view;
  c.infonce_temperature = infonce_temperature;
  return c;
}

AdamWConfig PretrainConfig::adamw() const {
  AdamWConfig c;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.weight_decay = weight_decay;
  return c;
}

KeyValues profile_to_kv(const ViTProfile& p) {
  KeyValues kv;
  kv["name"] = p.name;
  kv["image_size"] = std::to_string(p.image_size);
  kv["patch_size"] = std::to_string(p.patch_size);
  kv["embed_dim"] = std::to_string(p.embed_dim);
  kv["depth"] = std::to_string(p.depth);
  kv["heads"] = std::to_string(p.heads);
  kv["mlp_ratio"] = kv_format_double(p.mlp_ratio);
  kv["decoder_dim"] = std::to_string(p.decoder_dim);
  kv["decoder_depth"] = std::to_string(p.decoder_depth);
  kv["decoder_heads"] = std::to_string(p.decoder_heads);
  kv["rep_depth"] = std::to_string(p.rep_depth);
  kv["use_cls_token"] = p.use_cls_token ? "true" : "false";
  return kv;
}

ViTProfile profile_from_kv(const KeyValues& kv) {
  ViTProfile p;
  for (const auto& [k, v] : kv) {
    if (k == "name") p.name = v;
    else if (k == "image_size") p.image_size = kv_int(k, v);
    else if (k == "patch_size") p.patch_size = kv_int(k, v);
    else if (k == "embed_dim") p.embed_dim = kv_int(k, v);
    else if (k == "depth") p.depth = kv_int(k, v);
    else if (k == "heads") p.heads = kv_int(k, v);
    else if (k == "mlp_ratio") p.mlp_ratio = kv_double(k, v);
    else if (k == "decoder_dim") p.decoder_dim = kv_int(k, v);
    else if (k == "decoder_depth") p.decoder_depth = kv_int(k, v);
    else if (k == "decoder_heads") p.decoder_heads = kv_int(k, v);
    else if (k == "rep_depth") p.rep_depth = kv_int(k, v);
    else if (k == "use_cls_token") p.use_cls_token = kv_bool(k, v);
    else throw ConfigError("unknown profile key '" + k + "'");
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// model and data

JointModel::JointModel(const ViTProfile& p, const IdConfig& id_cfg, std::uint64_t seed) : profile(p), id(id_cfg) {
  Rng init = Rng::derive(seed, "init");
  online = std::make_unique<OnlineBranch>(online_params, profile, id, init);
  pixel_decoder = std::make_unique<PixelDecoder>(online_params, "pixel_decoder", profile, init);
  Rng scratch = Rng::derive(seed, "init", {1});
  target = std::make_unique<TargetBranch>(target_params, profile, id, scratch);
  copy_into_target(target_params, online_params);
}

Matrix image_to_patches(const Image& image, const ViTProfile& profile, const ImageNormalization& norm) {
  if (image.height != profile.image_size || image.width != profile.image_size)
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + ", profile " +
                     profile.name + " expects " + std::to_string(profile.image_size));
  return patchify_image(normalize_image(image, norm), profile.patch_size);
}

PretrainData prepare_pretrain_data(const std::vector<FaceSample>& samples, const ViTProfile& profile,
                                   const ImageNormalization& norm) {
  PretrainData data;
  data.norm = norm;
  data.samples.reserve(samples.size());
  for (const auto& s : samples) {
    PretrainSample ps;
    ps.sample_id = s.sample_id;
    ps.patches = image_to_patches(s.image, profile, norm);
    ps.regions = patchify_parsing(s.parsing, profile.patch_size);
    data.samples.push_back(std::move(ps));
  }
  return data;
}

std::uint64_t patch_hash(const std::vector<const Matrix*>& patches) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Matrix* m : patches) h = fnv1a64(m->data(), static_cast<std::size_t>(m->size()) * sizeof(double), h);
  return h;
}

// ---------------------------------------------------------------------------
// state and steps

PretrainState init_pretrain_state(const PretrainConfig& config, std::size_t dataset_size) {
  config.validate();
  if (dataset_size == 0) throw PreconditionError("pre-training needs a non-empty dataset");
  PretrainState s;
  s.config = config;
  s.model = std::make_unique<JointModel>(config.vit(), config.id(), config.seed);
  s.optim = AdamW(config.adamw());
  s.rng = Rng::derive(config.seed, "mask");
  const auto b = static_cast<std::size_t>(config.batch_size);
  s.steps_per_epoch = static_cast<std::int64_t>((dataset_size + b - 1) / b);
  s.total_steps = s.steps_per_epoch * config.epochs;
  return s;
}

std::vector<int> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng::derive(seed, "data", {static_cast<std::uint64_t>(epoch)});
  rng.shuffle(order);
  return order;
}

std::vector<int> batch_for_step(const PretrainState& state, std::size_t n) {
  const std::int64_t epoch = state.step / state.steps_per_epoch;
  const std::int64_t pos = state.step % state.steps_per_epoch;
  const auto order = epoch_order(state.config.seed, epoch, n);
  const auto b = static_cast<std::size_t>(state.config.batch_size);
  const std::size_t begin = static_cast<std::size_t>(pos) * b;
  if (begin >= n) throw StateError("step does not map to a batch (dataset size changed?)");
  return {order.begin() + static_cast<std::ptrdiff_t>(begin),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + b))};
}

BatchMasks sample_batch_masks(PretrainState& state, const PretrainData& data, const std::vector<int>& batch) {
  BatchMasks out;
  const auto& c = state.config;
  for (int idx : batch) {
    const auto& regions = data.samples.at(static_cast<std::size_t>(idx)).regions;
    out.masks.push_back(sample_mask(c.mask_strategy, regions, c.mask_ratio, state.rng));
    if (c.id_enabled && c.target_view == TargetView::visible_other_mask)
      out.other.push_back(sample_mask(c.mask_strategy, regions, c.mask_ratio, state.rng).mask);
  }
  return out;
}

LossReport compute_gradients(PretrainState& state, const PretrainData& data, const std::vector<int>& batch,
                             const BatchMasks& masks, std::uint64_t* input_hash) {
  if (batch.empty()) throw PreconditionError("empty batch");
  if (masks.masks.size() != batch.size()) throw PreconditionError("one mask pair per batch sample required");
  const auto& c = state.config;
  JointModel& m = *state.model;
  const VisionEncoder& enc = m.online->encoder;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<ag::Tensor> terms;
  std::vector<double> weights;
  std::vector<ag::Tensor> online_vecs;
  std::vector<Matrix> target_vecs;
  std::vector<const Matrix*> delivered;
  LossReport report;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const PretrainSample& s = data.samples.at(static_cast<std::size_t>(batch[j]));
    const MaskPair& pair = masks.masks[j];
    delivered.push_back(&s.patches);
    TokenSet z = enc.encode(enc.embed_visible(s.patches, pair.mask));
    TokenSet zf = assemble_full(z, pair.mask, m.online->mask_token, enc.pos_table());
    ag::Tensor pred = m.pixel_decoder->decode(zf);
    RecLoss rec = loss_rec(pred, normalized_pixel_targets(s.patches), pair, c.lambda_fr);
    terms.push_back(rec.total);
    weights.push_back(inv_b);
    report.rec_m += rec.rec_m.item() * inv_b;
    report.rec_fr += rec.rec_fr.item() * inv_b;
    if (c.id_enabled) {
      online_vecs.push_back(c.target_view == TargetView::masked_same_mask
                                ? m.online->forward_online_masked(zf, pair.mask)
                                : m.online->forward_online_rep(zf));
      static const std::vector<std::uint8_t> kNone;
      target_vecs.push_back(forward_target_variant(c.target_view, s.patches, *m.target, pair.mask,
                                                   masks.other.empty() ? kNone : masks.other[j]));
    }
  }
  if (c.id_enabled) {
    ag::Tensor id = loss_id_variant(c.id_loss, online_vecs, target_vecs, c.infonce_temperature);
    report.sim = id.item();
    terms.push_back(id);
    weights.push_back(c.lambda_cl);
  }
  ag::Tensor total = ag::weighted_sum(terms, weights);
  report.total = total.item();
  report.step = state.step + 1;
  report.epoch = state.step / state.steps_per_epoch;
  if (input_hash) *input_hash = patch_hash(delivered);
  if (std::isfinite(report.total)) ag::backward(total);
  return report;
}

LossReport pretrain_step(PretrainState& state, const PretrainData& data, std::uint64_t* input_hash) {
  const auto batch = batch_for_step(state, data.samples.size());
  const BatchMasks masks = sample_batch_masks(state, data, batch);
  state.model->online_params.zero_grad();
  LossReport r = compute_gradients(state, data, batch, masks, input_hash);
  if (!std::isfinite(r.total)) {
    std::string where;
    if (!state.diagnostic_dir.empty()) {
      const auto path = state.diagnostic_dir / ("diagnostic_step" + std::to_string(r.step) + ".ckpt");
      save_checkpoint(path, state);
      where = "; diagnostic checkpoint at " + path.string();
    }
    throw TrainingError("non-finite loss at step " + std::to_string(r.step) + where);
  }
  const auto warmup = static_cast<std::int64_t>(std::llround(state.config.warmup_epochs * state.steps_per_epoch));
  const double lr = cosine_lr(state.config.peak_lr(), state.config.min_lr, state.step, warmup, state.total_steps);
  // target tracks the pre-step online weights
  ema_update(state.model->target_params, state.model->online_params,
             ema_momentum(state.config.ema_tau_base, state.step, state.total_steps));
  state.optim.step(state.model->online_params, lr);
  state.model->online_params.zero_grad();
  ++state.step;
  return r;
}

// ---------------------------------------------------------------------------
// checkpoints

CheckpointFile pretrain_checkpoint(const PretrainState& state) {
  CheckpointFile ck;
  const JointModel& m = *state.model;
  ck.meta["kind"] = "pretrain";
  ck.meta["config"] = format_key_values(state.config.to_kv());
  ck.meta["config_hash"] = kv_hex64(state.config.hash());
  ck.meta["profile"] = format_key_values(profile_to_kv(m.profile));
  ck.meta["step"] = std::to_string(state.step);
  ck.meta["steps_per_epoch"] = std::to_string(state.steps_per_epoch);
  ck.meta["total_steps"] = std::to_string(state.total_steps);
  ck.meta["rng_state"] = state.rng.serialize();
  ck.meta["norm_mean"] = kv_format_triplet(m.norm.mean);
  ck.meta["norm_std"] = kv_format_triplet(m.norm.std);
  for (const auto& p : m.online_params.all()) ck.put("online." + p.name, p.tensor.value());
  for (const auto& p : m.target_params.all()) ck.put("target." + p.name, p.tensor.value());
  state.optim.export_state(ck, "optim.");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const PretrainState& state) {
  write_checkpoint_file(path, pretrain_checkpoint(state));
}

namespace {
void load_params(ParameterSet& ps, const CheckpointFile& ck, const std::string& prefix) {
  for (auto& p : ps.all()) {
    const Matrix& v = ck.at(prefix + p.name);
    if (v.rows() != p.tensor.rows() || v.cols() != p.tensor.cols())
      throw StateError("checkpoint tensor " + prefix + p.name + " has the wrong shape");
    p.tensor.mutable_value() = v;
  }
}
}  // namespace

std::unique_ptr<JointModel> load_joint_model(const CheckpointFile& ck) {
  const auto cfg = PretrainConfig::from_kv(parse_key_values(ck.meta_at("config")));
  const auto profile = profile_from_kv(parse_key_values(ck.meta_at("profile")));
  auto m = std::make_unique<JointModel>(profile, cfg.id(), cfg.seed);
  load_params(m->online_params, ck, "online.");
  load_params(m->target_params, ck, "target.");
  m->norm.mean = kv_triplet("norm_mean", ck.meta_at("norm_mean"));
  m->norm.std = kv_triplet("norm_std", ck.meta_at("norm_std"));
  return m;
}

PretrainState restore_pretrain_state(const CheckpointFile& ck) {
  if (ck.meta_at("kind") != "pretrain") throw StateError("not a pre-training checkpoint");
  PretrainState s;
  s.config = PretrainConfig::from_kv(parse_key_values(ck.meta_at("config")));
  if (kv_hex64(s.config.hash()) != ck.meta_at("config_hash")) throw StateError("checkpoint config hash mismatch");
  s.model = load_joint_model(ck);
  s.optim = AdamW(s.config.adamw());
  s.optim.import_state(ck, "optim.");
  s.rng.deserialize(ck.meta_at("rng_state"));
  s.step = kv_int64("step", ck.meta_at("step"));
  s.steps_per_epoch = kv_int64("steps_per_epoch", ck.meta_at("steps_per_epoch"));
  s.total_steps = kv_int64("total_steps", ck.meta_at("total_steps"));
  return s;
}

PretrainState load_checkpoint(const std::filesystem::path& path) {
  return restore_pretrain_state(read_checkpoint_file(path));
}

// ---------------------------------------------------------------------------
// loop

std::string format_loss_record(const LossReport& r) {
  return std::to_string(r.step) + "\t" + kv_format_double(r.rec_m) + "\t" + kv_format_double(r.rec_fr) + "\t" +
         kv_format_double(r.sim) + "\t" + kv_format_double(r.total);
}

namespace {
// Keeps the header and records up to `step` of an existing log.
void truncate_log(const std::filesystem::path& path, std::int64_t step) {
  std::vector<std::string> kept{kLossLogHeader};
  if (std::ifstream in(path); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line == kLossLogHeader) continue;
      if (std::stoll(line.substr(0, line.find('\t'))) <= step) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
}
}  // namespace

PretrainResult run_pretrain(PretrainState& state, const PretrainData& data, const PretrainOptions& options) {
  const std::int64_t spe =
      static_cast<std::int64_t>((data.samples.size() + static_cast<std::size_t>(state.config.batch_size) - 1) /
                                static_cast<std::size_t>(state.config.batch_size));
  if (spe != state.steps_per_epoch) throw StateError("dataset size does not match the training state");
  PretrainResult res;
  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "loss_log.tsv";
    truncate_log(log_path, state.step);
    log.open(log_path, std::ios::app);
    if (state.diagnostic_dir.empty()) state.diagnostic_dir = options.out_dir;
  }
  const auto& c = state.config;
  while (state.step < state.total_steps && (c.max_steps == 0 || state.step < c.max_steps)) {
    LossReport r = pretrain_step(state, data);
    res.reports.push_back(r);
    if (log.is_open()) log << format_loss_record(r) << "\n" << std::flush;
    if (options.on_step) options.on_step(r);
    if (!options.out_dir.empty() && c.checkpoint_every > 0 && state.step % c.checkpoint_every == 0) {
      res.last_checkpoint = options.out_dir / ("ckpt_step" + std::to_string(state.step) + ".ckpt");
      save_checkpoint(res.last_checkpoint, state);
    }
  }
  if (!options.out_dir.empty()) {
    res.last_checkpoint = options.out_dir / (state.step == state.total_steps ? "final.ckpt" : "last.ckpt");
    save_checkpoint(res.last_checkpoint, state);
  }
  res.final_step = state.step;
  res.params_hash = state.model->online_params.hash();
  return res;
}

PretrainResult pretrain(const PretrainData& data, const PretrainConfig& config, const PretrainOptions& options) {
  PretrainState state;
  if (!options.resume_from.empty()) {
    state = load_checkpoint(options.resume_from);
    if (state.config.hash() != config.hash())
      throw ConfigError("resume config differs from the checkpoint's training config");
    state.config.checkpoint_every = config.checkpoint_every;
    state.config.max_steps = config.max_steps;
  } else {
    state = init_pretrain_state(config, data.samples.size());
  }
  return run_pretrain(state, data, options);
}

}  // namespace fsvfm
