#include "umsd/training.hpp"

#include "umsd/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

namespace umsd {

using nlohmann::json;

void AdamWConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw RangeError("optimizer.lr must be >= 0");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
    throw RangeError("optimizer betas must lie in (0, 1)");
  if (!(eps > 0)) throw RangeError("optimizer.eps must be > 0");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
    throw RangeError("optimizer.weight_decay must be >= 0");
}

OptimizerState OptimizerState::zeros_like(const ParamSet& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamSet& params, const ParamSet& grads, OptimizerState& state,
                const AdamWConfig& c) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
    throw DimensionError("adamw: parameter, gradient and moment layouts differ");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    Matrix& p = params.value(i);
    const Matrix& g = grads.value(i);
    Matrix& m = state.m.value(i);
    Matrix& v = state.v.value(i);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    p.array() -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p.array());
  }
}

void PairingPolicy::validate() const {
  if (random < 0 || same_style < 0 || same_content < 0)
    throw RangeError("pairing fractions must be >= 0");
  if (std::abs(random + same_style + same_content - 1.0) > 1e-9)
    throw RangeError("pairing fractions must sum to 1");
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  optimizer.validate();
  pairing.validate();
  if (steps < 0) throw RangeError("train.steps must be >= 0");
  if (batch_size < 1) throw RangeError("train.batch_size must be >= 1");
  if (window < 2) throw RangeError("train.window must be >= 2");
  if (window > model.max_len) throw RangeError("train.window exceeds model.max_len");
  if (eval_every < 0) throw RangeError("train.eval_every must be >= 0");
  if (!(contact.height > 0) || !(contact.speed > 0))
    throw RangeError("contact thresholds must be > 0");
}

// ---------------------------------------------------------------------------
// Config JSON

namespace {

using Setter = std::function<void(const json&)>;

void read_fields(const json& obj, const std::string& section,
                 std::initializer_list<std::pair<const char*, Setter>> fields) {
  if (!obj.is_object()) throw FormatError(fmt::format("config section '{}' must be an object", section));
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const auto& [name, set] : fields)
      if (key == name) {
        set(value);
        known = true;
        break;
      }
    if (!known) throw FormatError(fmt::format("unknown config field '{}.{}'", section, key));
  }
}

template <typename T>
Setter into(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

json model_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {{"joints", m.joints},         {"diffuse_root", m.diffuse_root},
          {"d_model", m.d_model},       {"attn_heads", m.attn_heads},
          {"mha_heads", m.mha_heads},   {"state_size", m.state_size},
          {"conv_width", m.conv_width}, {"ffn_ratio", m.ffn_ratio},
          {"blocks", m.blocks},         {"max_len", m.max_len}};
}

json diffusion_json(const TrainConfig& c) {
  return {{"schedule", to_string(c.schedule)}, {"timesteps", c.model.timesteps}};
}

json config_json(const TrainConfig& c) {
  return {{"model", model_json(c)},
          {"diffusion", diffusion_json(c)},
          {"loss",
           {{"dcc", c.weights.dcc},
            {"dsc", c.weights.dsc},
            {"pos", c.weights.pos},
            {"vel", c.weights.vel},
            {"foot", c.weights.foot},
            {"contact_height", c.contact.height},
            {"contact_speed", c.contact.speed}}},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"train",
           {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"window", c.window},
            {"eval_every", c.eval_every},
            {"seed", c.seed},
            {"pairing",
             {{"random", c.pairing.random},
              {"same_style", c.pairing.same_style},
              {"same_content", c.pairing.same_content}}}}}};
}

TrainConfig config_from_json(const json& doc) {
  TrainConfig c;
  ModelConfig& m = c.model;
  std::string schedule = to_string(c.schedule);
  read_fields(doc, "config", {
    {"model", [&](const json& v) {
       read_fields(v, "model", {{"joints", into(m.joints)}, {"diffuse_root", into(m.diffuse_root)},
                                {"d_model", into(m.d_model)}, {"attn_heads", into(m.attn_heads)},
                                {"mha_heads", into(m.mha_heads)}, {"state_size", into(m.state_size)},
                                {"conv_width", into(m.conv_width)}, {"ffn_ratio", into(m.ffn_ratio)},
                                {"blocks", into(m.blocks)}, {"max_len", into(m.max_len)}});
     }},
    {"diffusion", [&](const json& v) {
       read_fields(v, "diffusion", {{"schedule", into(schedule)}, {"timesteps", into(m.timesteps)}});
     }},
    {"loss", [&](const json& v) {
       read_fields(v, "loss", {{"dcc", into(c.weights.dcc)}, {"dsc", into(c.weights.dsc)},
                               {"pos", into(c.weights.pos)}, {"vel", into(c.weights.vel)},
                               {"foot", into(c.weights.foot)},
                               {"contact_height", into(c.contact.height)},
                               {"contact_speed", into(c.contact.speed)}});
     }},
    {"optimizer", [&](const json& v) {
       read_fields(v, "optimizer", {{"lr", into(c.optimizer.lr)}, {"beta1", into(c.optimizer.beta1)},
                                    {"beta2", into(c.optimizer.beta2)}, {"eps", into(c.optimizer.eps)},
                                    {"weight_decay", into(c.optimizer.weight_decay)}});
     }},
    {"train", [&](const json& v) {
       read_fields(v, "train", {
         {"steps", into(c.steps)}, {"batch_size", into(c.batch_size)}, {"window", into(c.window)},
         {"eval_every", into(c.eval_every)}, {"seed", into(c.seed)},
         {"pairing", [&](const json& p) {
            read_fields(p, "train.pairing", {{"random", into(c.pairing.random)},
                                             {"same_style", into(c.pairing.same_style)},
                                             {"same_content", into(c.pairing.same_content)}});
          }}});
     }}});
  try {
    c.schedule = parse_schedule_kind(schedule);
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  return c;
}

}  // namespace

TrainConfig parse_train_config(std::string_view json_text) {
  TrainConfig c;
  try {
    c = config_from_json(json::parse(json_text));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("training config: {}", e.what()));
  }
  c.validate();
  return c;
}

std::string serialize_train_config(const TrainConfig& config) {
  return config_json(config).dump(2) + "\n";
}

std::string model_hash(const TrainConfig& config) {
  const json j = {{"model", model_json(config)}, {"diffusion", diffusion_json(config)}};
  return hex64(fnv1a(j.dump()));
}

std::string config_hash(const TrainConfig& config) {
  return hex64(fnv1a(config_json(config).dump()));
}

// ---------------------------------------------------------------------------
// Batches

std::vector<PairChoice> sample_pairs(const ClipIndex& clips, int batch, Index window,
                                     const PairingPolicy& policy, Rng& rng) {
  const std::size_t n = clips.frames.size();
  if (n == 0) throw DimensionError("cannot sample pairs from an empty dataset");
  if (clips.content_labels.size() != n || clips.style_labels.size() != n)
    throw DimensionError("clip index columns differ in length");
  for (Index f : clips.frames)
    if (f < window) throw RangeError(fmt::format("clip of {} frames is shorter than the window {}", f, window));
  auto pick = [&](std::size_t count) {
    return static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(count) - 1));
  };
  std::vector<PairChoice> out;
  for (int b = 0; b < batch; ++b) {
    PairChoice p;
    p.content = pick(n);
    const double u = rng.uniform();
    if (u < policy.random) {
      p.style = pick(n);
    } else {
      const bool by_style = u < policy.random + policy.same_style;
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < n; ++i)
        if (by_style ? clips.style_labels[i] == clips.style_labels[p.content]
                     : clips.content_labels[i] == clips.content_labels[p.content])
          pool.push_back(i);
      p.style = pool[pick(pool.size())];
    }
    p.content_start = rng.uniform_int(0, static_cast<int>(clips.frames[p.content] - window));
    p.style_start = rng.uniform_int(0, static_cast<int>(clips.frames[p.style] - window));
    out.push_back(p);
  }
  return out;
}

LossInputs window_inputs(const Skeleton& skel, const ContentRepr& content,
                         const ContentRepr& style, const PairChoice& pair, Index window,
                         bool diffuse_root, const ContactThresholds& contact) {
  const ContentRepr c = canonicalize_root(slice_frames(content, pair.content_start, window));
  const ContentRepr s = canonicalize_root(slice_frames(style, pair.style_start, window));
  return make_loss_inputs(skel, c, forward_kinematics(skel, s), diffuse_root, contact);
}

int thread_budget() {
  if (const char* env = std::getenv("UMSD_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

StepResult loss_and_gradient(const ParamSet& params, const ModelConfig& model,
                             std::span<const LossInputs> batch, const LossWeights& weights,
                             const Skeleton& skel, const NoiseSchedule& schedule,
                             std::uint64_t seed, int threads) {
  if (batch.empty()) throw DimensionError("loss_and_gradient: empty batch");
  weights.validate();
  std::vector<LossReport> reports(batch.size());
  std::vector<ParamSet> grads(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    Rng rng(Rng::derive(seed, {i}));
    const int t = rng.uniform_int(1, schedule.steps());
    ad::Tape tape;
    ParamBinder binder(tape, params);
    UmsdNetwork net(binder, model);
    const ItemLoss item = item_loss(net, skel, batch[i], t, schedule, rng, weights, model.diffuse_root);
    LossReport& r = reports[i];
    r = {item.dcc.value()(0, 0), item.dsc.value()(0, 0), item.pos.value()(0, 0),
         item.vel.value()(0, 0),  item.foot.value()(0, 0), item.total.value()(0, 0)};
    if (!std::isfinite(r.total))
      throw NumericError(fmt::format(
          "non-finite loss at batch item {} (t = {}): dcc {} dsc {} pos {} vel {} foot {}", i, t,
          r.dcc, r.dsc, r.pos, r.vel, r.foot));
    tape.backward(item.total);
    grads[i] = binder.gradients();
  });

  const double inv = 1.0 / static_cast<double>(batch.size());
  StepResult out{{}, params.zeros_like()};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t k = 0; k < out.grads.tensor_count(); ++k)
      out.grads.value(k) += grads[i].value(k);
    out.report.dcc += reports[i].dcc;
    out.report.dsc += reports[i].dsc;
    out.report.pos += reports[i].pos;
    out.report.vel += reports[i].vel;
    out.report.foot += reports[i].foot;
    out.report.total += reports[i].total;
  }
  for (std::size_t k = 0; k < out.grads.tensor_count(); ++k) out.grads.value(k) *= inv;
  for (double* v : {&out.report.dcc, &out.report.dsc, &out.report.pos, &out.report.vel,
                    &out.report.foot, &out.report.total})
    *v *= inv;
  if (!out.grads.all_finite()) throw NumericError("non-finite gradient");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json tensor_data(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

Matrix read_tensor(const json& data, Index rows, Index cols, const std::string& what) {
  if (!data.is_array() || static_cast<Index>(data.size()) != rows * cols)
    throw CheckpointError(fmt::format("checkpoint tensor {} has the wrong size", what));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) {
    if (!data[static_cast<std::size_t>(i)].is_number())
      throw CheckpointError(fmt::format("checkpoint tensor {} holds a non-number", what));
    m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  }
  return m;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  if (!ck.params.same_layout(ck.optimizer.m) || !ck.params.same_layout(ck.optimizer.v))
    throw CheckpointError("optimizer moments do not match the parameters");
  json tensors = json::array();
  for (std::size_t i = 0; i < ck.params.tensor_count(); ++i) {
    const Matrix& p = ck.params.value(i);
    tensors.push_back({{"name", ck.params.name(i)},
                       {"rows", p.rows()},
                       {"cols", p.cols()},
                       {"data", tensor_data(p)},
                       {"m", tensor_data(ck.optimizer.m.value(i))},
                       {"v", tensor_data(ck.optimizer.v.value(i))}});
  }
  const json doc = {{"schema_version", ck.schema_version},
                    {"format", "umsd-checkpoint"},
                    {"config", config_json(ck.config)},
                    {"model_hash", model_hash(ck.config)},
                    {"config_hash", config_hash(ck.config)},
                    {"step", ck.optimizer.step},
                    {"tensors", tensors}};
  return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("checkpoint is not valid JSON: {}", e.what()));
  }
  try {
    if (!doc.is_object() || doc.value("format", "") != "umsd-checkpoint")
      throw CheckpointError("not a checkpoint file");
    Checkpoint ck;
    ck.schema_version = doc.at("schema_version").get<int>();
    if (ck.schema_version != kCheckpointSchemaVersion)
      throw CheckpointError(fmt::format("unsupported checkpoint schema version {}", ck.schema_version));
    try {
      ck.config = config_from_json(doc.at("config"));
      ck.config.validate();
    } catch (const Error& e) {
      throw CheckpointError(fmt::format("checkpoint config: {}", e.what()));
    }
    if (doc.at("model_hash").get<std::string>() != model_hash(ck.config))
      throw CheckpointError("checkpoint model hash does not match its config");
    const auto specs = model_param_specs(ck.config.model);
    const json& tensors = doc.at("tensors");
    if (!tensors.is_array() || tensors.size() != specs.size())
      throw CheckpointError("checkpoint tensor list does not match the model");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const json& t = tensors[i];
      const ParamSpec& s = specs[i];
      if (t.at("name").get<std::string>() != s.name || t.at("rows").get<Index>() != s.rows ||
          t.at("cols").get<Index>() != s.cols)
        throw CheckpointError(fmt::format("checkpoint tensor {} does not match {} ({}x{})", i,
                                          s.name, s.rows, s.cols));
      ck.params.add(s.name, read_tensor(t.at("data"), s.rows, s.cols, s.name));
      ck.optimizer.m.add(s.name, read_tensor(t.at("m"), s.rows, s.cols, s.name + ".m"));
      ck.optimizer.v.add(s.name, read_tensor(t.at("v"), s.rows, s.cols, s.name + ".v"));
    }
    ck.optimizer.step = doc.at("step").get<long>();
    if (ck.optimizer.step < 0) throw CheckpointError("negative checkpoint step");
    if (!ck.params.all_finite()) throw CheckpointError("checkpoint holds non-finite parameters");
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(text);
}

// ---------------------------------------------------------------------------
// Loop

std::string train_csv_header() { return "step,l_dcc,l_dsc,l_pos,l_vel,l_foot,total,wall_time\n"; }

std::string train_csv_row(const TrainRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{:.3f}\n", r.step, r.loss.dcc, r.loss.dsc, r.loss.pos,
                     r.loss.vel, r.loss.foot, r.loss.total, r.wall_time);
}

TrainResult train(const Dataset& data, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const Skeleton& skel = data.skeleton;
  if (skel.joint_count() != config.model.joints)
    throw DimensionError(fmt::format("dataset skeleton has {} joints, model expects {}",
                                     skel.joint_count(), config.model.joints));
  if (data.clips.empty()) throw RangeError("training needs a non-empty dataset");
  ClipIndex index;
  for (const MotionClip& c : data.clips) {
    if (c.kind() != ReprKind::kContent) throw FormatError("training clips must be content clips");
    index.content_labels.push_back(c.content_label);
    index.style_labels.push_back(c.style_label);
    index.frames.push_back(c.frames());
  }

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.config = config;
  if (options.resume) {
    if (model_hash(options.resume->config) != model_hash(config))
      throw CheckpointError("resume checkpoint was trained with a different model config");
    ck.params = options.resume->params;
    ck.optimizer = options.resume->optimizer;
  } else {
    ck.params = init_params(config.model, config.seed);
    ck.optimizer = OptimizerState::zeros_like(ck.params);
  }

  const NoiseSchedule schedule = make_schedule(config.schedule, config.model.timesteps);
  const bool to_disk = !options.out_dir.empty();
  std::ofstream csv;
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.csv";
    const bool append = options.resume && std::filesystem::exists(log_path);
    csv.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError(fmt::format("cannot write {}", log_path.string()));
    if (!append) csv << train_csv_header();
  }
  auto save = [&] {
    if (to_disk) save_checkpoint(options.out_dir / "checkpoint.json", ck);
  };

  const auto t0 = std::chrono::steady_clock::now();
  const long first = ck.optimizer.step + 1;
  const long last = ck.optimizer.step + config.steps;
  for (long step = first; step <= last; ++step) {
    const auto s = static_cast<std::uint64_t>(step);
    Rng rng(Rng::derive(config.seed, {1, s}));
    const auto pairs = sample_pairs(index, config.batch_size, config.window, config.pairing, rng);
    std::vector<LossInputs> batch;
    for (const PairChoice& p : pairs)
      batch.push_back(window_inputs(skel, data.clips[p.content].content(),
                                    data.clips[p.style].content(), p, config.window,
                                    config.model.diffuse_root, config.contact));
    const StepResult r = loss_and_gradient(ck.params, config.model, batch, config.weights, skel,
                                           schedule, Rng::derive(config.seed, {2, s}),
                                           options.threads);
    adamw_step(ck.params, r.grads, ck.optimizer, config.optimizer);
    if (!ck.params.all_finite()) throw NumericError(fmt::format("parameters non-finite after step {}", step));

    TrainRecord rec{step, r.report,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.log.push_back(rec);
    if (to_disk) csv << train_csv_row(rec) << std::flush;
    if (options.on_step) options.on_step(rec);
    if (config.eval_every > 0 && step % config.eval_every == 0 && step != last) save();
  }
  save();
  return result;
}

LossTrend loss_trend(const std::vector<TrainRecord>& log, std::size_t window) {
  if (window == 0 || log.size() < window) throw RangeError("loss log shorter than the trend window");
  LossTrend t;
  for (std::size_t i = 0; i < window; ++i) {
    t.initial += log[i].loss.total;
    t.final += log[log.size() - window + i].loss.total;
  }
  t.initial /= static_cast<double>(window);
  t.final /= static_cast<double>(window);
  return t;
}

}  // namespace umsd
