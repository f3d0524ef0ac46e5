#include "doctest.h"

#include "support/gradcheck.hpp"
#include "umsd/rng.hpp"
#include "umsd/synth.hpp"
#include "umsd/training.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace umsd;
using testing::grad_error;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  ModelConfig& m = c.model;
  m.d_model = 8;
  m.attn_heads = 1;
  m.mha_heads = 1;
  m.state_size = 2;
  m.conv_width = 2;
  m.ffn_ratio = 2;
  m.blocks = 2;
  m.max_len = 32;
  m.timesteps = 10;
  c.steps = 3;
  c.batch_size = 2;
  c.window = 16;
  c.eval_every = 0;
  c.seed = 5;
  return c;
}

Dataset tiny_dataset() {
  DatasetConfig dc;
  dc.contents = {ContentKind::kWalk, ContentKind::kJump};
  dc.styles = {default_styles()[0], default_styles()[2]};
  dc.clips_per_pair = 1;
  dc.min_frames = 16;
  dc.max_frames = 20;
  Dataset ds;
  ds.skeleton = Skeleton::humanoid21();
  ds.clips = generate_clips(dc, ds.skeleton);
  return ds;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "umsd_test_training" / name;
  fs::remove_all(dir);
  return dir;
}

ParamSet scalar_set(double v) {
  ParamSet p;
  p.add("w", Matrix::Constant(1, 1, v));
  return p;
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  ParamSet p = init_params(tiny_config().model, 1);
  const ParamSet before = p;
  OptimizerState st = OptimizerState::zeros_like(p);
  AdamWConfig c;
  c.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) adamw_step(p, p.zeros_like(), st, c);
  CHECK(p == before);
  CHECK(st.step == 3);
}

TEST_CASE("adamw: first and second step on a scalar by hand") {
  AdamWConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.0;
  ParamSet p = scalar_set(1.0);
  OptimizerState st = OptimizerState::zeros_like(p);
  adamw_step(p, scalar_set(0.5), st, c);
  // m = 0.05, v = 0.00025; bias corrected: m_hat = 0.5, v_hat = 0.25.
  CHECK(std::abs(p["w"](0, 0) - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))) < 1e-15);
  CHECK(std::abs(st.m["w"](0, 0) - 0.05) < 1e-15);
  CHECK(std::abs(st.v["w"](0, 0) - 0.00025) < 1e-18);

  const double p1 = p["w"](0, 0);
  adamw_step(p, scalar_set(-1.0), st, c);
  const double m2 = 0.9 * 0.05 + 0.1 * -1.0;
  const double v2 = 0.999 * 0.00025 + 0.001 * 1.0;
  const double m_hat = m2 / (1 - 0.81), v_hat = v2 / (1 - 0.999 * 0.999);
  CHECK(std::abs(p["w"](0, 0) - (p1 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8))) < 1e-14);
}

TEST_CASE("adamw: pure weight decay shrinks by 1 - lr * wd") {
  AdamWConfig c;
  c.lr = 0.01;
  c.weight_decay = 0.1;
  ParamSet p = init_params(tiny_config().model, 2);
  const ParamSet before = p;
  OptimizerState st = OptimizerState::zeros_like(p);
  adamw_step(p, p.zeros_like(), st, c);
  for (Index i = 0; i < p.flat_size(); i += 37)
    CHECK(std::abs(p.flat(i) - before.flat(i) * (1 - 0.001)) <= 1e-16 * std::abs(before.flat(i)) + 1e-300);
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), RangeError);
}

TEST_CASE("init_params: deterministic, A < 0, count matches the shape manifest") {
  const ModelConfig m = tiny_config().model;
  CHECK(init_params(m, 3) == init_params(m, 3));
  CHECK_FALSE(init_params(m, 3) == init_params(m, 4));
  const ParamSet p = init_params(m, 3);
  Index expected = 0;
  for (const ParamSpec& s : model_param_specs(m)) expected += s.rows * s.cols;
  CHECK(p.flat_size() == expected);
  for (std::size_t i = 0; i < p.tensor_count(); ++i)
    if (p.name(i).ends_with(".a_log")) {
      const Matrix A = -p.value(i).array().exp().matrix();
      CHECK((A.array() < 0).all());
      for (Index s = 0; s < A.cols(); ++s) CHECK(std::abs(A(0, s) + (s + 1)) < 1e-12);
    }
}

TEST_CASE("pair sampling policies") {
  ClipIndex idx;
  for (int c = 0; c < 3; ++c)
    for (int s = 0; s < 4; ++s) {
      idx.content_labels.push_back(c);
      idx.style_labels.push_back(s);
      idx.frames.push_back(20 + c + s);
    }
  Rng rng(1);
  PairingPolicy style_only{0.0, 1.0, 0.0}, content_only{0.0, 0.0, 1.0};
  for (const PairChoice& p : sample_pairs(idx, 200, 16, style_only, rng)) {
    CHECK(idx.style_labels[p.style] == idx.style_labels[p.content]);
    CHECK(p.content_start >= 0);
    CHECK(p.content_start + 16 <= idx.frames[p.content]);
    CHECK(p.style_start + 16 <= idx.frames[p.style]);
  }
  for (const PairChoice& p : sample_pairs(idx, 200, 16, content_only, rng))
    CHECK(idx.content_labels[p.style] == idx.content_labels[p.content]);

  // Default policy: half random, so about 1/2 + 1/2 * 1/4 of pairs share a
  // style (random pairs share one a quarter of the time).
  int same_style = 0;
  const int n = 4000;
  for (const PairChoice& p : sample_pairs(idx, n, 16, PairingPolicy{}, rng))
    same_style += idx.style_labels[p.style] == idx.style_labels[p.content];
  const double expected = 0.25 + 0.25 * (1.0 / 3.0) + 0.5 * 0.25;
  // Binomial standard error is under 0.008 at n = 4000; allow 4 of them.
  CHECK(std::abs(same_style / static_cast<double>(n) - expected) < 0.032);

  idx.frames[0] = 10;
  CHECK_THROWS_AS(sample_pairs(idx, 1, 16, PairingPolicy{}, rng), RangeError);
  CHECK_THROWS_AS((PairingPolicy{0.5, 0.5, 0.5}.validate()), RangeError);
}

TEST_CASE("batch gradient: per-item streams, thread-independent, finite differences") {
  const TrainConfig cfg = tiny_config();
  const Dataset ds = tiny_dataset();
  const Skeleton& skel = ds.skeleton;
  const NoiseSchedule sched = make_schedule(cfg.schedule, cfg.model.timesteps);
  const ParamSet params = init_params(cfg.model, 9);
  std::vector<LossInputs> batch;
  for (std::size_t i = 0; i < 3; ++i)
    batch.push_back(window_inputs(skel, ds.clips[i].content(), ds.clips[3 - i].content(),
                                  {i, 3 - i, 0, 1}, 16, false, cfg.contact));

  const StepResult one = loss_and_gradient(params, cfg.model, batch, cfg.weights, skel, sched, 77, 1);
  const StepResult three = loss_and_gradient(params, cfg.model, batch, cfg.weights, skel, sched, 77, 3);
  CHECK(one.grads == three.grads);
  CHECK(one.report.total == three.report.total);

  // Item 0 alone, replayed through total_loss with the same derived stream.
  {
    ad::Tape tape;
    ParamBinder binder(tape, params);
    UmsdNetwork net(binder, cfg.model);
    Rng rng(Rng::derive(77, {0}));
    const BatchLoss b = total_loss(std::span(batch.data(), 1), cfg.weights, net, skel, sched, rng, false);
    const StepResult first = loss_and_gradient(params, cfg.model, std::span(batch.data(), 1),
                                               cfg.weights, skel, sched, 77, 1);
    CHECK(b.report.total == first.report.total);
  }

  Rng pick(4);
  ParamSet probe = params;
  double worst = 0.0;
  // The L1 consistency terms have thousands of kinks at this size; a 1e-4
  // step straddles a few of them, so probe closer. Roundoff then reaches
  // ~1e-10, hence the larger absolute floor.
  const double h = 1e-6;
  for (int k = 0; k < 200; ++k) {
    const Index i = static_cast<Index>(pick.next_u64() % static_cast<std::uint64_t>(params.flat_size()));
    const double orig = probe.flat(i);
    probe.set_flat(i, orig + h);
    const double fp = loss_and_gradient(probe, cfg.model, batch, cfg.weights, skel, sched, 77).report.total;
    probe.set_flat(i, orig - h);
    const double fm = loss_and_gradient(probe, cfg.model, batch, cfg.weights, skel, sched, 77).report.total;
    probe.set_flat(i, orig);
    worst = std::max(worst, grad_error(one.grads.flat(i), (fp - fm) / (2 * h), 1e-5));
  }
  MESSAGE("worst relative gradient error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("one step at lr 0 keeps the initial parameters") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 1;
  cfg.optimizer.lr = 0.0;
  const TrainResult r = train(tiny_dataset(), cfg);
  CHECK(r.checkpoint.params == init_params(cfg.model, cfg.seed));
  CHECK(r.checkpoint.step() == 1);
  CHECK(r.log.size() == 1);
}

TEST_CASE("training is deterministic and resumable bit for bit") {
  const Dataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.steps = 4;
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  const TrainResult ra = train(ds, cfg, {a});
  TrainOptions threaded{b};
  threaded.threads = 2;
  const TrainResult rb = train(ds, cfg, threaded);
  CHECK(read_text_file(a / "checkpoint.json") == read_text_file(b / "checkpoint.json"));
  REQUIRE(ra.log.size() == 4);
  for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss.total == rb.log[i].loss.total);

  cfg.steps = 2;
  const TrainResult first = train(ds, cfg, {c});
  TrainOptions resume{c};
  resume.resume = load_checkpoint(c / "checkpoint.json");
  const TrainResult rest = train(ds, cfg, resume);
  CHECK(rest.log.front().step == 3);
  CHECK(rest.checkpoint.params == ra.checkpoint.params);
  CHECK(rest.checkpoint.optimizer == ra.checkpoint.optimizer);

  const std::string log = read_text_file(c / "train_log.csv");
  CHECK(log.starts_with(train_csv_header()));
  CHECK(std::count(log.begin(), log.end(), '\n') == 5);
  CHECK(log.find("\n4,") != std::string::npos);
}

TEST_CASE("checkpoint round trip and corruption") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 1;
  const Checkpoint ck = train(tiny_dataset(), cfg).checkpoint;
  const std::string text = serialize_checkpoint(ck);
  CHECK(parse_checkpoint(text) == ck);
  CHECK(serialize_checkpoint(parse_checkpoint(text)) == text);

  CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("{}"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), CheckpointError);

  std::string wrong = text;
  const auto at = wrong.find("\"d_model\":8");
  REQUIRE(at != std::string::npos);
  wrong.replace(at, 11, "\"d_model\":16");
  CHECK_THROWS_AS(parse_checkpoint(wrong), CheckpointError);

  Checkpoint other = ck;
  other.config.model.d_model = 16;
  TrainOptions resume;
  resume.resume = ck;
  CHECK_THROWS_AS(train(tiny_dataset(), other.config, resume), CheckpointError);
}

TEST_CASE("non-finite parameters abort training") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 1;
  Checkpoint bad = train(tiny_dataset(), cfg).checkpoint;
  bad.params.at("msm.lin0.weight")(0, 0) = std::nan("");
  TrainOptions o;
  o.resume = bad;
  CHECK_THROWS_AS(train(tiny_dataset(), cfg, o), NumericError);
}

TEST_CASE("training config JSON") {
  TrainConfig c = tiny_config();
  c.optimizer.lr = 1e-6;
  c.schedule = ScheduleKind::kLinear;
  c.pairing = {0.2, 0.4, 0.4};
  const TrainConfig back = parse_train_config(serialize_train_config(c));
  CHECK(back == c);
  CHECK(config_hash(back) == config_hash(c));
  TrainConfig d = c;
  d.steps = 99;
  CHECK(model_hash(d) == model_hash(c));
  CHECK(config_hash(d) != config_hash(c));
  d.model.blocks = 1;
  CHECK(model_hash(d) != model_hash(c));

  CHECK(parse_train_config("{}") == TrainConfig{});
  CHECK_THROWS_AS(parse_train_config(R"({"train": {"stepz": 3}})"), FormatError);
  CHECK_THROWS_AS(parse_train_config(R"({"diffusion": {"schedule": "exp"}})"), FormatError);
  CHECK_THROWS_AS(parse_train_config(R"({"train": {"batch_size": 0}})"), RangeError);
  CHECK_THROWS_AS(parse_train_config(R"({"model": {"d_model": "big"}})"), FormatError);
  CHECK_THROWS_AS(parse_train_config("[1, 2"), FormatError);
}

TEST_CASE("loss trend windows and CSV rows") {
  std::vector<TrainRecord> log;
  for (int i = 1; i <= 10; ++i) log.push_back({i, {0, 0, 0, 0, 0, static_cast<double>(i)}, 0.0});
  const LossTrend t = loss_trend(log, 3);
  CHECK(t.initial == 2.0);
  CHECK(t.final == 9.0);
  CHECK_THROWS_AS(loss_trend(log, 11), RangeError);
  CHECK(train_csv_row({7, {1, 2, 3, 4, 5, 15}, 1.25}) == "7,1,2,3,4,5,15,1.250\n");
}
