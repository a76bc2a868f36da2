// Command-line entry point for the full pipeline: data generation, encoding,
// IFS training, frame synthesis, downstream classifier training, evaluation,
// and checkpoint/clip inspection.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ifs/config.hpp"
#include "ifs/recognition.hpp"
#include "ifs/trainer.hpp"

namespace {

using OverrideList = std::vector<std::pair<std::string, std::string>>;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;  // raw key=value strings
  OverrideList dedicated;         // flag-provided overrides, applied last
};

void add_set_option(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--set", opts.sets, "Override a config key (repeatable): --set key=value");
  cmd->add_option("--config", opts.config_path, "Config file of 'key = value' lines");
}

ifs::RunConfig resolve_config(const CommonOpts& opts) {
  OverrideList overrides;
  for (const auto& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ifs::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  overrides.insert(overrides.end(), opts.dedicated.begin(), opts.dedicated.end());
  return ifs::parse_config(opts.config_path, overrides);
}

// --tasks app,cat,mot / --regs adv,color toggles, mirroring the ablation rows.
void apply_task_list(ifs::RunConfig& cfg, const std::string& tasks) {
  cfg.train.tasks.app = tasks.find("app") != std::string::npos;
  cfg.train.tasks.cat = tasks.find("cat") != std::string::npos;
  cfg.train.tasks.mot = tasks.find("mot") != std::string::npos;
}

void apply_reg_list(ifs::RunConfig& cfg, const std::string& regs) {
  cfg.train.tasks.adv = regs.find("adv") != std::string::npos;
  cfg.train.tasks.color = regs.find("color") != std::string::npos;
}

std::unique_ptr<ifs::IfsModels> load_generator(const std::string& ckpt_path,
                                               ifs::TrainConfig& cfg_out) {
  cfg_out = ifs::peek_ifs_checkpoint(ckpt_path);
  auto models = std::make_unique<ifs::IfsModels>();
  models->init(cfg_out);
  ifs::load_ifs_checkpoint(ckpt_path, *models, cfg_out);
  return models;
}

ifs::FrameSourceKind parse_source(const std::string& s) {
  if (s == "ifs" || s == "ifs_mot") return ifs::FrameSourceKind::generator;
  if (s == "i_frame") return ifs::FrameSourceKind::i_frame;
  if (s == "ave") return ifs::FrameSourceKind::ave;
  throw ifs::ConfigError("unknown frame source '" + s +
                         "' (expected ifs, ifs_mot, i_frame, or ave)");
}

// Motion planes (dy, dx) rendered as an RGB frame with an empty blue channel.
ifs::Tensor motion_to_rgb(const ifs::Tensor& two_channel) {
  const int H = two_channel.dim(1), W = two_channel.dim(2);
  auto rgb = ifs::Tensor::zeros({3, H, W});
  std::copy(two_channel.data(), two_channel.data() + 2 * H * W, rgb.data());
  for (std::int64_t i = 2 * H * W; i < rgb.numel(); ++i) rgb.data()[i] = 0.0f;
  return rgb;
}

int run_gen_data(const CommonOpts& opts, const std::string& out_dir) {
  auto cfg = resolve_config(opts);
  const auto manifest = ifs::generate_moving_shapes(cfg.generator_config(), out_dir);
  std::printf("wrote %zu clips and manifest.txt under %s\n", manifest.records.size(),
              out_dir.c_str());
  return 0;
}

int run_encode(const std::string& in, const std::string& out, int block, int search) {
  const auto clip = ifs::read_rvid(in);
  ifs::write_cvid(out, ifs::compress_clip(clip, block, search));
  std::printf("encoded %s -> %s (block %d, search %d)\n", in.c_str(), out.c_str(), block,
              search);
  return 0;
}

int run_train_ifs(const CommonOpts& opts, const std::string& data,
                  const std::string& out_dir, const std::string& resume) {
  auto cfg = resolve_config(opts);
  const auto manifest = ifs::load_manifest(data);
  const auto result = ifs::train_ifs(cfg.train, manifest, out_dir, resume);
  std::printf("tasks=%s steps=%ld best_val_total=%.6f\n", cfg.train.tasks.describe().c_str(),
              result.steps, result.best_val_total);
  std::printf("checkpoints: %s (best), %s (last)\n", result.best_checkpoint.c_str(),
              result.last_checkpoint.c_str());
  return 0;
}

int run_synthesize(const std::string& ckpt, const std::string& in, const std::string& out,
                   const std::string& summary_dir) {
  ifs::TrainConfig gen_cfg;
  auto models = load_generator(ckpt, gen_cfg);
  const auto video = ifs::read_rvid(in);
  if (!summary_dir.empty()) {
    std::filesystem::create_directories(summary_dir);
    const auto frames =
        ifs::synthesize_clip_summary(models->F, gen_cfg.T, gen_cfg.input_mode,
                                     gen_cfg.codec(), video, 0, in, ckpt);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03zu.ppm", i);
      ifs::write_ppm((std::filesystem::path(summary_dir) / name).string(), frames[i].image);
    }
    std::printf("wrote %zu synthetic frames under %s\n", frames.size(), summary_dir.c_str());
    return 0;
  }
  const auto window = ifs::clip_window(video, 0, gen_cfg.T);
  const auto frame = ifs::synthesize_frame(models->F, gen_cfg.T, gen_cfg.input_mode,
                                           gen_cfg.codec(), window, in, ckpt);
  ifs::write_ppm(out, frame.image);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int run_train_classifier(const CommonOpts& opts, const std::string& data,
                         const std::string& out_dir, const std::string& source_name,
                         const std::string& generator_ckpt) {
  auto cfg = resolve_config(opts);
  const auto manifest = ifs::load_manifest(data);

  ifs::FrameSourceSpec source;
  source.kind = parse_source(source_name);
  source.T = cfg.train.T;
  source.codec = cfg.train.codec();
  source.mode = cfg.train.input_mode;
  std::unique_ptr<ifs::IfsModels> models;
  if (source.kind == ifs::FrameSourceKind::generator) {
    if (generator_ckpt.empty()) {
      throw ifs::ConfigError("--source " + source_name + " requires --generator");
    }
    ifs::TrainConfig gen_cfg;
    models = load_generator(generator_ckpt, gen_cfg);
    source.F = &models->F;
    source.T = gen_cfg.T;
    source.mode = gen_cfg.input_mode;
    source.codec = gen_cfg.codec();
    source.checkpoint_id = generator_ckpt;
  }
  const auto result = ifs::train_classifier(cfg.train, manifest, source, out_dir);
  std::printf("source=%s best_val_top1=%.4f final_val_top1=%.4f\n", source_name.c_str(),
              result.best_val_top1, result.final_val_top1);
  std::printf("checkpoints: %s (best), %s (last)\n", result.best_checkpoint.c_str(),
              result.last_checkpoint.c_str());
  return 0;
}

int run_evaluate(const CommonOpts& opts, const std::string& classifier_ckpt,
                 const std::string& data, const std::string& source_name,
                 const std::string& generator_ckpt, int samples,
                 const std::string& report_path) {
  auto cfg = resolve_config(opts);
  const auto manifest = ifs::load_manifest(data);
  auto classifier = ifs::load_classifier_checkpoint(classifier_ckpt);

  ifs::FrameSourceSpec source;
  source.kind = parse_source(source_name);
  source.T = cfg.train.T;
  source.codec = cfg.train.codec();
  source.mode = cfg.train.input_mode;
  std::unique_ptr<ifs::IfsModels> models;
  if (source.kind == ifs::FrameSourceKind::generator) {
    if (generator_ckpt.empty()) {
      throw ifs::ConfigError("--source " + source_name + " requires --generator");
    }
    ifs::TrainConfig gen_cfg;
    models = load_generator(generator_ckpt, gen_cfg);
    source.F = &models->F;
    source.T = gen_cfg.T;
    source.mode = gen_cfg.input_mode;
    source.codec = gen_cfg.codec();
    source.checkpoint_id = generator_ckpt;
  }
  int videos = 0;
  const double top1 =
      ifs::evaluate_top1(classifier, manifest, ifs::Split::val, source, samples, &videos);
  std::printf("top1=%.6f videos=%d samples_per_video=%d\n", top1, videos, samples);
  if (!report_path.empty()) ifs::write_eval_report(report_path, top1, videos, samples);
  return 0;
}

int run_inspect_decode(const std::string& in, std::string out) {
  if (out.empty()) {
    out = std::filesystem::path(in).replace_extension().string() + ".decoded.rvid";
  }
  const auto compressed = ifs::read_cvid(in);
  ifs::write_rvid(out, ifs::reconstruct_clip(compressed));
  std::printf("decoded %s -> %s (T=%d, %dx%d, block %d, search %d)\n", in.c_str(),
              out.c_str(), compressed.T, compressed.height, compressed.width,
              compressed.block_size, compressed.search_range);
  return 0;
}

// Emits the synthetic frame plus the estimated I-frame, motion and residual
// panels for one clip, alongside the ground-truth codec planes.
int run_inspect_panels(const std::string& ckpt, const std::string& clip_path,
                       const std::string& out_dir) {
  ifs::TrainConfig gen_cfg;
  auto models = load_generator(ckpt, gen_cfg);
  const auto video = ifs::read_rvid(clip_path);
  const auto window = ifs::clip_window(video, 0, gen_cfg.T);
  const auto compressed =
      ifs::compress_clip(window, gen_cfg.block_size, gen_cfg.search_range);

  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  ifs::write_ppm((dir / "input_iframe.ppm").string(),
                 ifs::normalize_frame(compressed.i_frame));

  ifs::NoGradGuard ng;
  auto input = ifs::stack_batch({ifs::assemble_input(compressed, gen_cfg.input_mode)});
  auto x_hat = models->F.forward(input);
  auto frame0 = ifs::Tensor::zeros({3, gen_cfg.H, gen_cfg.W});
  std::copy(x_hat.data(), x_hat.data() + frame0.numel(), frame0.data());
  ifs::write_ppm((dir / "synthetic.ppm").string(), frame0);

  auto recovered = models->Fa.forward(x_hat);
  auto rec0 = ifs::Tensor::zeros({3, gen_cfg.H, gen_cfg.W});
  std::copy(recovered.data(), recovered.data() + rec0.numel(), rec0.data());
  ifs::write_ppm((dir / "recovered_iframe.ppm").string(), rec0);

  auto est = models->Fm.forward(x_hat);
  auto gt = ifs::motion_residual_target(compressed);
  const std::int64_t plane = static_cast<std::int64_t>(gen_cfg.H) * gen_cfg.W;
  for (int t = 0; t < gen_cfg.T - 1; ++t) {
    const int c0 = t * 5;
    auto take = [&](const float* base, int from, int count) {
      auto out = ifs::Tensor::zeros({count, gen_cfg.H, gen_cfg.W});
      std::copy(base + from * plane, base + (from + count) * plane, out.data());
      return out;
    };
    char name[48];
    std::snprintf(name, sizeof(name), "est_motion_t%d.ppm", t + 2);
    ifs::write_ppm((dir / name).string(), motion_to_rgb(take(est.data(), c0, 2)));
    std::snprintf(name, sizeof(name), "est_residual_t%d.ppm", t + 2);
    ifs::write_ppm((dir / name).string(), take(est.data(), c0 + 2, 3));
    std::snprintf(name, sizeof(name), "gt_motion_t%d.ppm", t + 2);
    ifs::write_ppm((dir / name).string(), motion_to_rgb(take(gt.data(), c0, 2)));
    std::snprintf(name, sizeof(name), "gt_residual_t%d.ppm", t + 2);
    ifs::write_ppm((dir / name).string(), take(gt.data(), c0 + 2, 3));
  }
  std::printf("wrote inspection panels under %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Informative frame synthesis: condense a video clip into one trainable 2D frame"};
  app.require_subcommand(1);

  // gen-data
  CommonOpts gen_opts;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate the moving-shapes dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  add_set_option(gen, gen_opts);
  std::optional<int> gen_clips, gen_classes;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--clips", gen_clips, "Number of clips");
  gen->add_option("--classes", gen_classes, "Number of motion classes");
  gen->add_option("--seed", gen_seed, "Generation seed");

  // encode
  std::string enc_in, enc_out;
  int enc_block = 8, enc_search = 4;
  auto* enc = app.add_subcommand("encode", "Compress a .rvid clip to .cvid");
  enc->add_option("--in", enc_in, "Input .rvid")->required();
  enc->add_option("--out", enc_out, "Output .cvid")->required();
  enc->add_option("--block", enc_block, "Block size");
  enc->add_option("--search", enc_search, "Search range");

  // train-ifs
  CommonOpts ti_opts;
  std::string ti_data, ti_out, ti_resume, ti_tasks, ti_regs;
  std::optional<int> ti_epochs, ti_batch, ti_jobs;
  std::optional<double> ti_lr;
  std::optional<std::uint64_t> ti_seed;
  auto* ti = app.add_subcommand("train-ifs", "Train the frame-synthesis networks");
  ti->add_option("--data", ti_data, "manifest.txt path")->required();
  ti->add_option("--out", ti_out, "Output directory")->required();
  add_set_option(ti, ti_opts);
  ti->add_option("--resume", ti_resume, "Checkpoint to resume from");
  ti->add_option("--tasks", ti_tasks, "Comma list from {app,cat,mot}");
  ti->add_option("--regs", ti_regs, "Comma list from {adv,color}");
  ti->add_option("--epochs", ti_epochs, "Training epochs");
  ti->add_option("--batch", ti_batch, "Mini-batch size");
  ti->add_option("--base_lr", ti_lr, "Initial learning rate");
  ti->add_option("--seed", ti_seed, "Training seed");
  ti->add_option("--jobs", ti_jobs, "Worker thread cap");

  // synthesize
  std::string syn_ckpt, syn_in, syn_out = "synthetic.ppm", syn_summary;
  auto* syn = app.add_subcommand("synthesize", "Condense a clip into a synthetic frame");
  syn->add_option("--ckpt", syn_ckpt, "IFS checkpoint")->required();
  syn->add_option("--in", syn_in, "Input .rvid video")->required();
  syn->add_option("--out", syn_out, "Output .ppm (single window)");
  syn->add_option("--summary-dir", syn_summary,
                  "Emit one frame per non-overlapping window into this directory");

  // train-classifier
  CommonOpts tc_opts;
  std::string tc_data, tc_out, tc_source, tc_generator;
  std::optional<int> tc_epochs, tc_jobs;
  std::optional<std::uint64_t> tc_seed;
  auto* tc = app.add_subcommand("train-classifier",
                                "Train a 2D classifier on frames from a source");
  tc->add_option("--data", tc_data, "manifest.txt path")->required();
  tc->add_option("--out", tc_out, "Output directory")->required();
  tc->add_option("--source", tc_source, "ifs | ifs_mot | i_frame | ave")->required();
  tc->add_option("--generator", tc_generator, "IFS checkpoint for generator sources");
  add_set_option(tc, tc_opts);
  tc->add_option("--epochs", tc_epochs, "Training epochs");
  tc->add_option("--seed", tc_seed, "Training seed");
  tc->add_option("--jobs", tc_jobs, "Worker thread cap");

  // evaluate
  CommonOpts ev_opts;
  std::string ev_classifier, ev_data, ev_source, ev_generator, ev_report;
  int ev_samples = 4;
  auto* ev = app.add_subcommand("evaluate", "Top-1 accuracy on the val split");
  ev->add_option("--classifier", ev_classifier, "Classifier checkpoint")->required();
  ev->add_option("--data", ev_data, "manifest.txt path")->required();
  ev->add_option("--source", ev_source, "ifs | ifs_mot | i_frame | ave")->required();
  ev->add_option("--generator", ev_generator, "IFS checkpoint for generator sources");
  ev->add_option("--samples", ev_samples, "Windows sampled per video");
  ev->add_option("--report", ev_report, "Write a report file here");
  add_set_option(ev, ev_opts);

  // inspect
  std::string ins_decode, ins_out, ins_ckpt, ins_clip, ins_dir;
  auto* ins = app.add_subcommand("inspect", "Decode clips or dump checkpoint panels");
  ins->add_option("--decode", ins_decode, "Decode a .cvid back to .rvid");
  ins->add_option("--out", ins_out, "Decode output path");
  ins->add_option("--ckpt", ins_ckpt, "IFS checkpoint for panel dumps");
  ins->add_option("--clip", ins_clip, "Clip to inspect");
  ins->add_option("--out-dir", ins_dir, "Panel output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (gen_clips) gen_opts.dedicated.emplace_back("clips", std::to_string(*gen_clips));
      if (gen_classes) {
        gen_opts.dedicated.emplace_back("classes", std::to_string(*gen_classes));
      }
      if (gen_seed) gen_opts.dedicated.emplace_back("seed", std::to_string(*gen_seed));
      return run_gen_data(gen_opts, gen_out);
    }
    if (enc->parsed()) return run_encode(enc_in, enc_out, enc_block, enc_search);
    if (ti->parsed()) {
      if (ti_epochs) ti_opts.dedicated.emplace_back("epochs", std::to_string(*ti_epochs));
      if (ti_batch) ti_opts.dedicated.emplace_back("batch_size", std::to_string(*ti_batch));
      if (ti_lr) ti_opts.dedicated.emplace_back("base_lr", std::to_string(*ti_lr));
      if (ti_seed) ti_opts.dedicated.emplace_back("seed", std::to_string(*ti_seed));
      if (ti_jobs) ti_opts.dedicated.emplace_back("jobs", std::to_string(*ti_jobs));
      auto cfg = resolve_config(ti_opts);
      if (!ti_tasks.empty()) apply_task_list(cfg, ti_tasks);
      if (!ti_regs.empty()) apply_reg_list(cfg, ti_regs);
      const auto manifest = ifs::load_manifest(ti_data);
      const auto result = ifs::train_ifs(cfg.train, manifest, ti_out, ti_resume);
      std::printf("tasks=%s steps=%ld best_val_total=%.6f\n",
                  cfg.train.tasks.describe().c_str(), result.steps, result.best_val_total);
      std::printf("checkpoints: %s (best), %s (last)\n", result.best_checkpoint.c_str(),
                  result.last_checkpoint.c_str());
      return 0;
    }
    if (syn->parsed()) return run_synthesize(syn_ckpt, syn_in, syn_out, syn_summary);
    if (tc->parsed()) {
      if (tc_epochs) tc_opts.dedicated.emplace_back("epochs", std::to_string(*tc_epochs));
      if (tc_seed) tc_opts.dedicated.emplace_back("seed", std::to_string(*tc_seed));
      if (tc_jobs) tc_opts.dedicated.emplace_back("jobs", std::to_string(*tc_jobs));
      return run_train_classifier(tc_opts, tc_data, tc_out, tc_source, tc_generator);
    }
    if (ev->parsed()) {
      return run_evaluate(ev_opts, ev_classifier, ev_data, ev_source, ev_generator,
                          ev_samples, ev_report);
    }
    if (ins->parsed()) {
      if (!ins_decode.empty()) return run_inspect_decode(ins_decode, ins_out);
      if (!ins_ckpt.empty() && !ins_clip.empty() && !ins_dir.empty()) {
        return run_inspect_panels(ins_ckpt, ins_clip, ins_dir);
      }
      throw ifs::ConfigError(
          "inspect: pass either --decode IN [--out OUT] or --ckpt --clip --out-dir");
    }
  } catch (const ifs::DivergenceError& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  } catch (const ifs::ConfigError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const ifs::FormatError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const ifs::DimensionError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const ifs::ContractError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const ifs::LoadError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 0;
}
