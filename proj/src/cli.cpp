#include "umsd/cli.hpp"

#include "umsd/pipeline.hpp"
#include "umsd/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <optional>

namespace umsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> steps;
  std::string checkpoint;
  std::string format = "text";
  std::string data;
  std::string content;
  std::string style;
  std::string clip;
};

fs::path manifest_path(const std::string& data) {
  const fs::path p(data);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

void write_run_record(const fs::path& out, const std::string& command, const std::string& hash,
                      std::uint64_t seed, json extra = json::object()) {
  extra["command"] = command;
  extra["config_hash"] = hash;
  extra["seed"] = seed;
  write_text_file(out / "run.json", extra.dump(2) + "\n");
}

bool csv_format(const Flags& f) {
  if (f.format != "text" && f.format != "csv")
    throw RangeError(fmt::format("--format must be text or csv, not '{}'", f.format));
  return f.format == "csv";
}

int gen_data(const Flags& f, std::ostream& out) {
  const bool csv = csv_format(f);
  DatasetConfig config = f.config.empty() ? DatasetConfig{} : parse_dataset_config(read_text_file(f.config));
  if (f.seed) config.seed = *f.seed;
  config.validate();
  const DatasetManifest m = build_dataset(config, f.out);
  const std::string chash = hex64(fnv1a(serialize_dataset_config(config)));
  write_run_record(f.out, "gen-data", chash, config.seed, {{"manifest_hash", manifest_hash(m)}});
  if (csv) {
    out << "clips,contents,styles,manifest_hash,config_hash,seed\n"
        << fmt::format("{},{},{},{},{},{}\n", m.entries.size(), m.content_labels.size(),
                       m.style_labels.size(), manifest_hash(m), chash, config.seed);
  } else {
    Index lo = m.entries.front().frames, hi = lo;
    for (const ManifestEntry& e : m.entries) {
      lo = std::min(lo, e.frames);
      hi = std::max(hi, e.frames);
    }
    out << fmt::format("wrote {} clips ({} contents x {} styles), frames {}..{}\n", m.entries.size(),
                       m.content_labels.size(), m.style_labels.size(), lo, hi)
        << fmt::format("manifest       {}\n", (fs::path(f.out) / "manifest.json").string())
        << fmt::format("manifest hash  {}\n", manifest_hash(m))
        << fmt::format("config hash    {}\n", chash);
  }
  return kExitOk;
}

int train_cmd(const Flags& f, std::ostream& out) {
  const bool csv = csv_format(f);
  std::optional<Checkpoint> resume;
  if (!f.checkpoint.empty()) resume = load_checkpoint(f.checkpoint);
  TrainConfig config = !f.config.empty() ? parse_train_config(read_text_file(f.config))
                       : resume          ? resume->config
                                         : TrainConfig{};
  if (f.seed) config.seed = *f.seed;
  if (f.steps) config.steps = *f.steps;
  config.validate();
  if (f.data.empty()) throw RangeError("train needs --data");
  const Dataset data = load_dataset(manifest_path(f.data));

  TrainOptions opt;
  opt.out_dir = f.out;
  opt.resume = resume;
  opt.threads = thread_budget();
  const int every = std::max(1, config.eval_every > 0 ? config.eval_every : config.steps / 10);
  if (!csv)
    opt.on_step = [&](const TrainRecord& r) {
      if (r.step % every == 0)
        out << fmt::format("step {:>6}  total {:.5f}  dcc {:.4f}  dsc {:.4f}  pos {:.5f}  {:.1f}s\n",
                           r.step, r.loss.total, r.loss.dcc, r.loss.dsc, r.loss.pos, r.wall_time)
            << std::flush;
    };
  const TrainResult res = train(data, config, opt);
  write_run_record(f.out, "train", config_hash(config), config.seed,
                   {{"model_hash", model_hash(config)}, {"steps", res.checkpoint.step()}});
  if (csv) {
    out << train_csv_header();
    if (!res.log.empty()) out << train_csv_row(res.log.back());
  } else {
    out << fmt::format("trained to step {}; checkpoint {}\n", res.checkpoint.step(),
                       (fs::path(f.out) / "checkpoint.json").string());
  }
  return kExitOk;
}

StyleRepr style_positions(const ClipFile& f) {
  return f.clip.kind() == ReprKind::kContent ? forward_kinematics(f.skeleton, f.clip.content())
                                             : f.clip.style();
}

int transfer_cmd(const Flags& f, std::ostream& out) {
  const bool csv = csv_format(f);
  if (f.checkpoint.empty() || f.content.empty() || f.style.empty())
    throw RangeError("transfer needs --checkpoint, --content and --style");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  if (!f.config.empty()) {
    const TrainConfig expected = parse_train_config(read_text_file(f.config));
    if (model_hash(expected) != model_hash(ck.config))
      throw CheckpointError(fmt::format("checkpoint model hash {} does not match config {}",
                                        model_hash(ck.config), model_hash(expected)));
  }
  const ClipFile content = load_clip(f.content);
  const ClipFile style = load_clip(f.style);
  if (!(content.skeleton == style.skeleton))
    throw DimensionError("content and style clips use different skeletons");
  if (content.clip.kind() != ReprKind::kContent)
    throw FormatError("the content clip must hold rotations");
  const std::uint64_t seed = f.seed.value_or(0);
  MotionClip result;
  result.repr = transfer(ck, content.skeleton, content.clip.content(), style_positions(style), seed);
  result.fps = content.clip.fps;
  result.content_label = content.clip.content_label;
  result.style_label = style.clip.style_label;

  fs::create_directories(f.out);
  const fs::path clip_path = fs::path(f.out) / "stylized.json";
  save_clip(clip_path, {kClipSchemaVersion, content.skeleton, result});
  const Matrix p = forward_kinematics(content.skeleton, result.content()).positions;
  std::string rows = "frame,joint,name,x,y,z\n";
  for (Index n = 0; n < p.rows(); ++n)
    for (int j = 0; j < content.skeleton.joint_count(); ++j)
      rows += fmt::format("{},{},{},{},{},{}\n", n, j,
                          j < static_cast<int>(content.skeleton.names.size()) ? content.skeleton.names[j] : "",
                          p(n, 3 * j), p(n, 3 * j + 1), p(n, 3 * j + 2));
  write_text_file(fs::path(f.out) / "stylized_positions.csv", rows);
  write_run_record(f.out, "transfer", config_hash(ck.config), seed,
                   {{"model_hash", model_hash(ck.config)}, {"content", f.content}, {"style", f.style}});
  if (csv)
    out << "frames,joints,output\n" << fmt::format("{},{},{}\n", p.rows(), content.skeleton.joint_count(), clip_path.string());
  else
    out << fmt::format("stylized {} frames -> {}\n", p.rows(), clip_path.string());
  return kExitOk;
}

int eval_cmd(const Flags& f, std::ostream& out, std::ostream& err) {
  const bool csv = csv_format(f);
  if (f.checkpoint.empty() || f.data.empty()) throw RangeError("eval needs --checkpoint and --data");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const Dataset data = load_dataset(manifest_path(f.data));
  if (data.skeleton.joint_count() != ck.config.model.joints)
    throw DimensionError("dataset skeleton does not match the checkpoint");
  const std::uint64_t seed = f.seed.value_or(0);
  const std::vector<MotionClip> generated = evaluation_grid(ck, data, seed);
  const EvalExtractors ex = train_extractors(data, seed);
  bool regularized = false;
  const std::vector<MetricRow> rows = compute_metrics(generated, data.clips, ex, seed, &regularized);
  if (regularized)
    err << fmt::format("warning: feature covariance is rank deficient; added {} I before FMD\n", kFrechetEps);
  const std::string table = metrics_csv(rows);
  fs::create_directories(f.out);
  write_text_file(fs::path(f.out) / "metrics.csv", table);
  write_run_record(f.out, "eval", config_hash(ck.config), seed,
                   {{"model_hash", model_hash(ck.config)}, {"manifest_hash", manifest_hash(data.manifest)}});
  if (csv) {
    out << table;
  } else {
    for (const MetricRow& r : rows) out << fmt::format("{:<10} {:.6f}\n", r.metric, r.value);
    out << fmt::format("({} generated clips, seed {})\n", generated.size(), seed);
  }
  return kExitOk;
}

int inspect_cmd(const Flags& f, std::ostream& out) {
  const bool csv = csv_format(f);
  const ClipFile file = load_clip(f.clip);
  const MotionClip& c = file.clip;
  const bool content = c.kind() == ReprKind::kContent;
  double lo = NAN, hi = NAN;
  if (content) {
    lo = INFINITY;
    hi = 0.0;
    const Matrix& r = c.content().rotations;
    for (Index n = 0; n < r.rows(); ++n)
      for (int j = 0; j < c.joint_count(); ++j) {
        const double norm = r.block<1, 4>(n, 4 * j).norm();
        lo = std::min(lo, norm);
        hi = std::max(hi, norm);
      }
  }
  const StyleRepr positions = style_positions(file);
  const auto mask = foot_contact_mask(file.skeleton, positions);
  const Index contact_frames = mask.rows() == 0 ? 0 : mask.rowwise().any().count();
  const std::string content_name =
      fmt::format("{}", c.content_label), style_name = fmt::format("{}", c.style_label);
  if (csv) {
    out << "kind,frames,fps,content_label,style_label,joints,min_quat_norm,max_quat_norm,contact_frames\n"
        << fmt::format("{},{},{},{},{},{},{},{},{}\n", content ? "content" : "style", c.frames(), c.fps,
                       content_name, style_name, c.joint_count(), content ? fmt::format("{}", lo) : "",
                       content ? fmt::format("{}", hi) : "", contact_frames);
  } else {
    out << fmt::format("kind            {}\n", content ? "content" : "style")
        << fmt::format("frames          {}\n", c.frames())
        << fmt::format("fps             {}\n", c.fps)
        << fmt::format("labels          content {}, style {}\n", content_name, style_name)
        << fmt::format("joints          {}\n", c.joint_count());
    if (content) out << fmt::format("quat norm       {:.9f} .. {:.9f}\n", lo, hi);
    out << fmt::format("contact frames  {}\n", contact_frames);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Motion style transfer: synthetic data, training, transfer and evaluation", "umsd"};
  app.require_subcommand(1);
  Flags f;
  auto format = [&](CLI::App* s) {
    s->add_option("--format", f.format, "Output format: text or csv")->check(CLI::IsMember({"text", "csv"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", f.config, "Dataset config (JSON)");
  gen->add_option("--seed", f.seed, "Override the config seed");
  gen->add_option("--out", f.out, "Output directory")->required();
  format(gen);

  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--config", f.config, "Training config (JSON)");
  tr->add_option("--data", f.data, "Dataset directory or manifest")->required();
  tr->add_option("--seed", f.seed, "Override the config seed");
  tr->add_option("--steps", f.steps, "Override the number of steps");
  tr->add_option("--checkpoint", f.checkpoint, "Resume from this checkpoint");
  tr->add_option("--out", f.out, "Output directory")->required();
  format(tr);

  CLI::App* xf = app.add_subcommand("transfer", "Stylize a content clip with a style clip");
  xf->add_option("--checkpoint", f.checkpoint, "Trained checkpoint")->required();
  xf->add_option("--content", f.content, "Content clip file")->required();
  xf->add_option("--style", f.style, "Style clip file")->required();
  xf->add_option("--config", f.config, "Reject the checkpoint unless it matches this config");
  xf->add_option("--seed", f.seed, "Sampling seed");
  xf->add_option("--out", f.out, "Output directory")->required();
  format(xf);

  CLI::App* ev = app.add_subcommand("eval", "Compute FMD, KMD, diversity, CRA and SRA");
  ev->add_option("--checkpoint", f.checkpoint, "Trained checkpoint")->required();
  ev->add_option("--data", f.data, "Dataset directory or manifest")->required();
  ev->add_option("--seed", f.seed, "Sampling and metric seed");
  ev->add_option("--out", f.out, "Output directory")->required();
  format(ev);

  CLI::App* in = app.add_subcommand("inspect", "Summarize a clip file");
  in->add_option("clip", f.clip, "Clip file")->required();
  format(in);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (gen->parsed()) return gen_data(f, out);
    if (tr->parsed()) return train_cmd(f, out);
    if (xf->parsed()) return transfer_cmd(f, out);
    if (ev->parsed()) return eval_cmd(f, out, err);
    return inspect_cmd(f, out);
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace umsd
