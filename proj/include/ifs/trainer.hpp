#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ifs/checkpoint.hpp"
#include "ifs/codec.hpp"
#include "ifs/dataset.hpp"
#include "ifs/error.hpp"
#include "ifs/losses.hpp"
#include "ifs/models.hpp"
#include "ifs/optim.hpp"
#include "ifs/recognition.hpp"

namespace ifs {

// Horizontal-flip augmentation policy. Directional labels are corrupted by a
// plain flip, so swap_lr exchanges labels 0 (right) and 1 (left); default off
// for the directional toy dataset.
enum class FlipMode { off, plain, swap_lr };

inline const char* flip_mode_name(FlipMode m) {
  switch (m) {
    case FlipMode::off: return "off";
    case FlipMode::plain: return "plain";
    default: return "swap_lr";
  }
}

inline FlipMode parse_flip_mode(const std::string& s) {
  if (s == "off") return FlipMode::off;
  if (s == "plain") return FlipMode::plain;
  if (s == "swap_lr") return FlipMode::swap_lr;
  throw ConfigError("unknown flip mode '" + s + "'");
}

struct TrainConfig {
  int epochs = 40;
  int batch_size = 16;
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  TaskFlags tasks;
  bool lsgan_real_is_zero = true;
  InputMode input_mode = InputMode::compressed;
  int base_width = 32;
  int n_res_blocks = 3;
  int num_classes = 4;
  int T = 6;
  int H = 32;
  int W = 32;
  int block_size = 8;
  int search_range = 4;
  std::uint64_t seed = 0;
  FlipMode flip = FlipMode::off;
  int disc_every = 1;
  int jobs = 0;  // 0 = hardware default

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs/batch_size >= 1");
    if (base_lr <= 0) throw ConfigError("train: base_lr must be positive");
    if (T < 2) throw ConfigError("train: T must be >= 2");
    if (num_classes < 2) throw ConfigError("train: need at least 2 classes");
    if (disc_every < 1) throw ConfigError("train: disc_every must be >= 1");
    if (search_range < 1 || search_range > 127) {
      throw ConfigError("train: search_range must be in [1, 127]");
    }
  }
  CodecParams codec() const { return {block_size, search_range}; }
  int gen_in_channels() const { return assembled_channels(T, 3, input_mode); }
  int mot_channels() const { return (T - 1) * (2 + 3); }
};

inline void set_jobs(int jobs) {
#ifdef _OPENMP
  if (jobs > 0) omp_set_num_threads(jobs);
#else
  (void)jobs;
#endif
}

// The five networks of the joint objective.
struct IfsModels {
  GeneratorNet F;
  EncDecNet Fa;  // appearance decoder
  EncDecNet Fm;  // motion decoder
  ClassifierNet C;
  DiscriminatorNet D;

  void init(const TrainConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, 0x1F5u));
    ArchConfig gen;
    gen.base_width = cfg.base_width;
    gen.n_res_blocks = cfg.n_res_blocks;
    gen.input_channels = cfg.gen_in_channels();
    gen.output_channels = 3;
    gen.H = cfg.H;
    gen.W = cfg.W;
    F.init("F", gen, rng);

    ArchConfig app = gen;
    app.input_channels = 3;
    app.output_channels = 3;
    Fa.init("Fa", app, rng);

    ArchConfig mot = app;
    mot.output_channels = cfg.mot_channels();
    Fm.init("Fm", mot, rng);

    ArchConfig enc;
    enc.base_width = cfg.base_width;
    enc.input_channels = 3;
    enc.H = cfg.H;
    enc.W = cfg.W;
    C.init("C", enc, cfg.num_classes, rng);
    D.init("D", enc, rng);
  }

  // Parameters updated in phase 2: the generator plus every enabled head.
  std::vector<Parameter*> generator_side_params(const TaskFlags& tasks) {
    std::vector<Parameter*> out = F.params();
    auto append = [&out](std::vector<Parameter*> more) {
      out.insert(out.end(), more.begin(), more.end());
    };
    if (tasks.app) append(Fa.params());
    if (tasks.cat) append(C.params());
    if (tasks.mot) append(Fm.params());
    return out;
  }

  std::vector<Parameter*> all_params() {
    std::vector<Parameter*> out = F.params();
    for (auto more : {Fa.params(), Fm.params(), C.params(), D.params()}) {
      out.insert(out.end(), more.begin(), more.end());
    }
    return out;
  }
};

// One training batch in network form.
struct PreparedBatch {
  Tensor input;       // [N, Cin, H, W]
  Tensor x1;          // [N, 3, H, W] normalized key frames
  Tensor mot_target;  // [N, (T-1)(2+C), H, W]
  std::vector<Tensor> clip_means;  // T entries of [N, 3]
  std::vector<int> labels;
};

inline PreparedBatch prepare_batch(const std::vector<RawClip>& clips,
                                   const std::vector<int>& labels, const TrainConfig& cfg,
                                   const std::vector<const CompressedClip*>& compressed) {
  if (clips.empty() || clips.size() != labels.size() || clips.size() != compressed.size()) {
    throw ContractError("prepare_batch: inconsistent batch inputs");
  }
  for (const auto& c : clips) {
    if (c.T != cfg.T) {
      throw ContractError("prepare_batch: mixed clip lengths in one batch (expected T=" +
                          std::to_string(cfg.T) + ", got " + std::to_string(c.T) + ")");
    }
  }
  const std::size_t n = clips.size();
  std::vector<Tensor> inputs(n), keys(n), targets(n), norms(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const auto& cc = *compressed[static_cast<std::size_t>(i)];
    inputs[static_cast<std::size_t>(i)] = assemble_input(cc, cfg.input_mode);
    targets[static_cast<std::size_t>(i)] = motion_residual_target(cc);
    keys[static_cast<std::size_t>(i)] =
        normalize_frame(clips[static_cast<std::size_t>(i)].frame(0));
    norms[static_cast<std::size_t>(i)] = normalize_clip(clips[static_cast<std::size_t>(i)]);
  }
  PreparedBatch b;
  b.input = stack_batch(inputs);
  b.x1 = stack_batch(keys);
  b.mot_target = stack_batch(targets);
  b.clip_means = clip_channel_means<float>(norms);
  b.labels = labels;
  return b;
}

// One joint optimization step. Phase 1 trains the discriminator on its own
// objective against a detached synthetic frame; phase 2 forwards every
// enabled head, accumulates the unweighted sum, and takes a single Adam step
// over the generator-side parameters. Gradient resets are explicit, so the
// two phases cannot leak into each other.
inline LossReport train_ifs_step(IfsModels& models, const PreparedBatch& batch,
                                 const TrainConfig& cfg, double lr, long step_index) {
  LossReport report;
  const auto& tasks = cfg.tasks;

  Tensor x_hat = models.F.forward(batch.input);

  Tensor g_loss = Tensor::zeros({1});
  if (tasks.adv) {
    // Phase 1: discriminator update against a detached synthetic frame.
    auto d_real = models.D.forward(batch.x1);
    auto d_fake = models.D.forward(x_hat.detach());
    auto [d_loss, g_unused] =
        adversarial_losses_from_scores(d_real, d_fake, d_fake, cfg.lsgan_real_is_zero);
    (void)g_unused;
    report.r_adv_d = d_loss.item();
    if (step_index % cfg.disc_every == 0) {
      auto d_params = models.D.params();
      zero_grad(d_params);
      backward(d_loss);
      adam_step<float>(d_params, static_cast<float>(lr), static_cast<float>(cfg.beta1),
                       static_cast<float>(cfg.beta2), static_cast<float>(cfg.adam_eps));
      zero_grad(d_params);
    }
    // Generator-side score against the updated, frozen discriminator.
    Tensor d_live;
    {
      FreezeGuard frozen(models.D.params());
      d_live = models.D.forward(x_hat);
    }
    if (cfg.lsgan_real_is_zero) {
      g_loss = mean_all(square(d_live));
    } else {
      g_loss = mean_all(square(add_scalar(mul_scalar(d_live, -1.0f), 1.0f)));
    }
    report.r_adv_g = g_loss.item();
  }

  // Phase 2: task heads on the live synthetic frame.
  Tensor l_app = Tensor::zeros({1});
  Tensor l_cat = Tensor::zeros({1});
  Tensor l_mot = Tensor::zeros({1});
  Tensor r_color = Tensor::zeros({1});
  if (tasks.app) {
    l_app = appearance_loss(batch.x1, models.Fa.forward(x_hat));
    report.l_app = l_app.item();
  }
  if (tasks.cat) {
    l_cat = categorization_loss(models.C.forward(x_hat), batch.labels);
    report.l_cat = l_cat.item();
  }
  if (tasks.mot) {
    l_mot = motion_loss(models.Fm.forward(x_hat), batch.mot_target, cfg.T, 3);
    report.l_mot = l_mot.item();
  }
  if (tasks.color) {
    r_color = color_consistency_loss(batch.clip_means, x_hat);
    report.r_color = r_color.item();
  }
  auto total = total_loss(l_app, l_cat, l_mot, g_loss, r_color, tasks);
  report.total = total.item();

  if (const auto bad = report.first_non_finite(); !bad.empty()) {
    throw DivergenceError("training diverged at step " + std::to_string(step_index) +
                          ": loss term '" + bad + "' is not finite");
  }

  auto gen_params = models.generator_side_params(tasks);
  zero_grad(gen_params);
  backward(total);
  adam_step<float>(gen_params, static_cast<float>(lr), static_cast<float>(cfg.beta1),
                   static_cast<float>(cfg.beta2), static_cast<float>(cfg.adam_eps));
  zero_grad(gen_params);
  return report;
}

// Forward-only loss evaluation used for the validation cadence.
inline LossReport eval_ifs_losses(IfsModels& models, const PreparedBatch& batch,
                                  const TrainConfig& cfg) {
  NoGradGuard ng;
  LossReport report;
  const auto& tasks = cfg.tasks;
  Tensor x_hat = models.F.forward(batch.input);
  if (tasks.adv) {
    auto d_real = models.D.forward(batch.x1);
    auto d_fake = models.D.forward(x_hat.detach());
    auto [d_loss, g_loss] =
        adversarial_losses_from_scores(d_real, d_fake, d_fake, cfg.lsgan_real_is_zero);
    report.r_adv_d = d_loss.item();
    report.r_adv_g = g_loss.item();
  }
  if (tasks.app) report.l_app = appearance_loss(batch.x1, models.Fa.forward(x_hat)).item();
  if (tasks.cat) {
    report.l_cat = categorization_loss(models.C.forward(x_hat), batch.labels).item();
  }
  if (tasks.mot) {
    report.l_mot = motion_loss(models.Fm.forward(x_hat), batch.mot_target, cfg.T, 3).item();
  }
  if (tasks.color) report.r_color = color_consistency_loss(batch.clip_means, x_hat).item();
  report.total = (tasks.app ? report.l_app : 0.0) + (tasks.cat ? report.l_cat : 0.0) +
                 (tasks.mot ? report.l_mot : 0.0) + (tasks.adv ? report.r_adv_g : 0.0) +
                 (tasks.color ? report.r_color : 0.0);
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (IFSCKPT1): every parameter with its Adam state
// plus "meta.*" scalars describing the architecture and codec settings.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_param_arrays(std::vector<NamedArray>& arrays,
                                const std::vector<Parameter*>& params) {
  for (const auto* p : params) {
    NamedArray value;
    value.name = p->name;
    value.shape = p->value.shape();
    value.data.assign(p->value.data(), p->value.data() + p->value.numel());
    arrays.push_back(std::move(value));
    NamedArray m;
    m.name = p->name + ".adam_m";
    m.shape = p->value.shape();
    m.data = std::vector<float>(p->adam_m.begin(), p->adam_m.end());
    arrays.push_back(std::move(m));
    NamedArray v;
    v.name = p->name + ".adam_v";
    v.shape = p->value.shape();
    v.data = std::vector<float>(p->adam_v.begin(), p->adam_v.end());
    arrays.push_back(std::move(v));
    arrays.push_back(NamedArray::scalar(p->name + ".step", static_cast<float>(p->step_count)));
  }
}

inline void restore_param_arrays(const CheckpointIndex& index,
                                 const std::vector<Parameter*>& params) {
  for (auto* p : params) {
    const auto& value = index.require(p->name);
    if (value.shape != p->value.shape()) {
      throw FormatError("checkpoint: shape mismatch for '" + p->name + "'");
    }
    std::copy(value.data.begin(), value.data.end(), p->value.data());
    const auto& m = index.require(p->name + ".adam_m");
    const auto& v = index.require(p->name + ".adam_v");
    if (m.data.size() != p->adam_m.size() || v.data.size() != p->adam_v.size()) {
      throw FormatError("checkpoint: Adam state size mismatch for '" + p->name + "'");
    }
    std::copy(m.data.begin(), m.data.end(), p->adam_m.begin());
    std::copy(v.data.begin(), v.data.end(), p->adam_v.begin());
    p->step_count = static_cast<std::int64_t>(index.scalar(p->name + ".step"));
  }
}

inline void check_meta(const CheckpointIndex& index, const std::string& key, float expect) {
  const float got = index.scalar(key);
  if (got != expect) {
    throw ConfigError("checkpoint rejects mismatched config: " + key + " is " +
                      std::to_string(got) + ", expected " + std::to_string(expect));
  }
}

}  // namespace detail

inline constexpr float kCkptKindIfs = 1.0f;
inline constexpr float kCkptKindClassifier = 2.0f;

inline void save_ifs_checkpoint(const std::string& path, IfsModels& models,
                                const TrainConfig& cfg) {
  std::vector<NamedArray> arrays;
  arrays.push_back(NamedArray::scalar("meta.kind", kCkptKindIfs));
  arrays.push_back(NamedArray::scalar("meta.base_width", static_cast<float>(cfg.base_width)));
  arrays.push_back(
      NamedArray::scalar("meta.n_res_blocks", static_cast<float>(cfg.n_res_blocks)));
  arrays.push_back(NamedArray::scalar("meta.T", static_cast<float>(cfg.T)));
  arrays.push_back(NamedArray::scalar("meta.H", static_cast<float>(cfg.H)));
  arrays.push_back(NamedArray::scalar("meta.W", static_cast<float>(cfg.W)));
  arrays.push_back(NamedArray::scalar("meta.block_size", static_cast<float>(cfg.block_size)));
  arrays.push_back(
      NamedArray::scalar("meta.search_range", static_cast<float>(cfg.search_range)));
  arrays.push_back(NamedArray::scalar("meta.classes", static_cast<float>(cfg.num_classes)));
  arrays.push_back(
      NamedArray::scalar("meta.input_mode", static_cast<float>(static_cast<int>(cfg.input_mode))));
  detail::append_param_arrays(arrays, models.all_params());
  write_checkpoint(path, arrays);
}

inline void load_ifs_checkpoint(const std::string& path, IfsModels& models,
                                const TrainConfig& cfg) {
  CheckpointIndex index(read_checkpoint(path));
  detail::check_meta(index, "meta.kind", kCkptKindIfs);
  detail::check_meta(index, "meta.base_width", static_cast<float>(cfg.base_width));
  detail::check_meta(index, "meta.n_res_blocks", static_cast<float>(cfg.n_res_blocks));
  detail::check_meta(index, "meta.T", static_cast<float>(cfg.T));
  detail::check_meta(index, "meta.H", static_cast<float>(cfg.H));
  detail::check_meta(index, "meta.W", static_cast<float>(cfg.W));
  detail::check_meta(index, "meta.classes", static_cast<float>(cfg.num_classes));
  detail::check_meta(index, "meta.input_mode",
                     static_cast<float>(static_cast<int>(cfg.input_mode)));
  detail::restore_param_arrays(index, models.all_params());
}

// Reads the meta scalars of an IFS checkpoint into a TrainConfig skeleton,
// so tools can rebuild the right architecture without a config file.
inline TrainConfig peek_ifs_checkpoint(const std::string& path) {
  CheckpointIndex index(read_checkpoint(path));
  if (index.scalar("meta.kind") != kCkptKindIfs) {
    throw FormatError("checkpoint: not an IFS generator checkpoint");
  }
  TrainConfig cfg;
  cfg.base_width = static_cast<int>(index.scalar("meta.base_width"));
  cfg.n_res_blocks = static_cast<int>(index.scalar("meta.n_res_blocks"));
  cfg.T = static_cast<int>(index.scalar("meta.T"));
  cfg.H = static_cast<int>(index.scalar("meta.H"));
  cfg.W = static_cast<int>(index.scalar("meta.W"));
  cfg.block_size = static_cast<int>(index.scalar("meta.block_size"));
  cfg.search_range = static_cast<int>(index.scalar("meta.search_range"));
  cfg.num_classes = static_cast<int>(index.scalar("meta.classes"));
  cfg.input_mode = static_cast<InputMode>(static_cast<int>(index.scalar("meta.input_mode")));
  return cfg;
}

inline void save_classifier_checkpoint(const std::string& path, ClassifierNet& net,
                                       const TrainConfig& cfg, FrameSourceKind source) {
  std::vector<NamedArray> arrays;
  arrays.push_back(NamedArray::scalar("meta.kind", kCkptKindClassifier));
  arrays.push_back(NamedArray::scalar("meta.base_width", static_cast<float>(cfg.base_width)));
  arrays.push_back(NamedArray::scalar("meta.H", static_cast<float>(cfg.H)));
  arrays.push_back(NamedArray::scalar("meta.W", static_cast<float>(cfg.W)));
  arrays.push_back(NamedArray::scalar("meta.classes", static_cast<float>(cfg.num_classes)));
  arrays.push_back(NamedArray::scalar("meta.frame_source", static_cast<float>(static_cast<int>(source))));
  detail::append_param_arrays(arrays, net.params());
  write_checkpoint(path, arrays);
}

inline ClassifierNet load_classifier_checkpoint(const std::string& path) {
  CheckpointIndex index(read_checkpoint(path));
  if (index.scalar("meta.kind") != kCkptKindClassifier) {
    throw FormatError("checkpoint: not a classifier checkpoint");
  }
  ArchConfig enc;
  enc.base_width = static_cast<int>(index.scalar("meta.base_width"));
  enc.input_channels = 3;
  enc.H = static_cast<int>(index.scalar("meta.H"));
  enc.W = static_cast<int>(index.scalar("meta.W"));
  ClassifierNet net;
  Rng rng(0);
  net.init("C", enc, static_cast<int>(index.scalar("meta.classes")), rng);
  detail::restore_param_arrays(index, net.params());
  return net;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainIfsResult {
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::string loss_csv;
  std::string val_csv;
  double best_val_total = std::numeric_limits<double>::infinity();
  double first_epoch_train_total = 0.0;
  double final_epoch_train_total = 0.0;
  long steps = 0;
};

// Joint optimization of F, Fa, Fm, C, D with per-epoch cosine decay, seeded
// shuffling, optional flip augmentation, per-step loss CSV, per-epoch
// validation, and best/last checkpoints.
inline TrainIfsResult train_ifs(const TrainConfig& cfg, const Manifest& manifest,
                                const std::string& out_dir,
                                const std::string& resume_path = "",
                                long max_steps = 0) {
  cfg.validate();
  set_jobs(cfg.jobs);
  std::filesystem::create_directories(out_dir);

  IfsModels models;
  models.init(cfg);
  if (!resume_path.empty()) load_ifs_checkpoint(resume_path, models, cfg);

  const auto train_idx = manifest.indices(Split::train);
  const auto val_idx = manifest.indices(Split::val);
  if (train_idx.empty()) throw ContractError("train_ifs: empty train split");
  for (const auto& rec : manifest.records) {
    if (rec.label >= cfg.num_classes) {
      throw ConfigError("train_ifs: manifest label " + std::to_string(rec.label) +
                        " exceeds configured classes");
    }
  }

  // Clips are small; decode once. Compressed forms are memoized for the
  // unflipped path.
  std::vector<RawClip> raw(manifest.records.size());
  std::vector<CompressedClip> compressed(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    raw[i] = read_rvid(manifest.resolve(manifest.records[i]));
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(raw.size()); ++i) {
    compressed[static_cast<std::size_t>(i)] =
        compress_clip(raw[static_cast<std::size_t>(i)], cfg.block_size, cfg.search_range);
  }

  TrainIfsResult result;
  result.last_checkpoint = (std::filesystem::path(out_dir) / "ifs_last.ckpt").string();
  result.best_checkpoint = (std::filesystem::path(out_dir) / "ifs_best.ckpt").string();
  result.loss_csv = (std::filesystem::path(out_dir) / "loss.csv").string();
  result.val_csv = (std::filesystem::path(out_dir) / "val.csv").string();

  std::ofstream loss_csv(result.loss_csv, std::ios::binary);
  loss_csv << LossReport::csv_header() << '\n';
  std::ofstream val_csv(result.val_csv, std::ios::binary);
  val_csv << "epoch,lr," << "l_app,l_cat,l_mot,r_adv_d,r_adv_g,r_color,total" << '\n';

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
    const auto order = epoch_permutation(train_idx.size(), Rng::mix(cfg.seed, 0xE50Cu + epoch));
    Rng flip_rng(Rng::mix(cfg.seed, 0xF11Du + epoch));

    double epoch_total = 0.0;
    long epoch_steps = 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t n =
          std::min<std::size_t>(cfg.batch_size, order.size() - cursor);
      std::vector<RawClip> clips;
      std::vector<int> labels;
      std::vector<bool> flipped;
      std::vector<CompressedClip> flipped_storage;
      clips.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rec = train_idx[order[cursor + i]];
        const bool apply_flip = cfg.flip != FlipMode::off && flip_rng.next_int(0, 1) == 1;
        int label = manifest.records[rec].label;
        if (apply_flip && cfg.flip == FlipMode::swap_lr && label <= 1) label = 1 - label;
        clips.push_back(apply_flip ? flip_horizontal(raw[rec], true) : raw[rec]);
        labels.push_back(label);
        flipped.push_back(apply_flip);
        if (apply_flip) {
          flipped_storage.push_back(
              compress_clip(clips.back(), cfg.block_size, cfg.search_range));
        }
      }
      std::vector<const CompressedClip*> comp_ptrs;
      std::size_t flip_cursor = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rec = train_idx[order[cursor + i]];
        comp_ptrs.push_back(flipped[i] ? &flipped_storage[flip_cursor++] : &compressed[rec]);
      }
      auto batch = prepare_batch(clips, labels, cfg, comp_ptrs);
      const auto report = train_ifs_step(models, batch, cfg, lr, step);
      loss_csv << report.csv_line(step, lr) << '\n';
      loss_csv.flush();
      epoch_total += report.total;
      ++epoch_steps;
      ++step;
      cursor += n;
      if (max_steps > 0 && step >= max_steps) break;
    }
    if (max_steps > 0 && step >= max_steps) {
      result.first_epoch_train_total = epoch_total / static_cast<double>(epoch_steps);
      result.final_epoch_train_total = result.first_epoch_train_total;
      break;
    }
    const double train_mean = epoch_total / static_cast<double>(epoch_steps);
    if (epoch == 0) result.first_epoch_train_total = train_mean;
    result.final_epoch_train_total = train_mean;

    // Validation every epoch; best = lowest mean total on val.
    if (!val_idx.empty()) {
      LossReport sum;
      long batches = 0;
      std::size_t vcur = 0;
      while (vcur < val_idx.size()) {
        const std::size_t n = std::min<std::size_t>(cfg.batch_size, val_idx.size() - vcur);
        std::vector<RawClip> clips;
        std::vector<int> labels;
        std::vector<const CompressedClip*> comp_ptrs;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t rec = val_idx[vcur + i];
          clips.push_back(raw[rec]);
          labels.push_back(manifest.records[rec].label);
          comp_ptrs.push_back(&compressed[rec]);
        }
        const auto r = eval_ifs_losses(models, prepare_batch(clips, labels, cfg, comp_ptrs), cfg);
        sum.l_app += r.l_app;
        sum.l_cat += r.l_cat;
        sum.l_mot += r.l_mot;
        sum.r_adv_d += r.r_adv_d;
        sum.r_adv_g += r.r_adv_g;
        sum.r_color += r.r_color;
        sum.total += r.total;
        ++batches;
        vcur += n;
      }
      const double inv = 1.0 / static_cast<double>(batches);
      LossReport mean{sum.l_app * inv, sum.l_cat * inv,   sum.l_mot * inv,
                      sum.r_adv_d * inv, sum.r_adv_g * inv, sum.r_color * inv,
                      sum.total * inv};
      val_csv << mean.csv_line(epoch, lr) << '\n';
      val_csv.flush();
      if (mean.total < result.best_val_total) {
        result.best_val_total = mean.total;
        save_ifs_checkpoint(result.best_checkpoint, models, cfg);
      }
    }
  }
  save_ifs_checkpoint(result.last_checkpoint, models, cfg);
  if (val_idx.empty()) {
    save_ifs_checkpoint(result.best_checkpoint, models, cfg);
  }
  result.steps = step;
  return result;
}

struct TrainClassifierResult {
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::string curve_csv;
  double best_val_top1 = 0.0;
  double final_val_top1 = 0.0;
};

// Trains a fresh encoder classifier on frames produced by the given source
// (frozen generator, key frame, or temporal average). Cross entropy, Adam,
// cosine decay; the accuracy curve is written per epoch.
inline TrainClassifierResult train_classifier(const TrainConfig& cfg,
                                              const Manifest& manifest,
                                              const FrameSourceSpec& source,
                                              const std::string& out_dir) {
  cfg.validate();
  set_jobs(cfg.jobs);
  std::filesystem::create_directories(out_dir);

  const auto train_idx = manifest.indices(Split::train);
  const auto val_idx = manifest.indices(Split::val);
  if (train_idx.empty()) throw ContractError("train_classifier: empty train split");
  if (val_idx.empty()) throw ContractError("train_classifier: empty val split");

  // Frames are deterministic per clip; synthesize once up front.
  std::vector<RawClip> windows(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    RawClip video = read_rvid(manifest.resolve(manifest.records[i]));
    if (video.T < source.T) {
      throw ContractError("train_classifier: video shorter than one window");
    }
    windows[i] = clip_window(video, 0, source.T);
  }
  const auto frames = source.frames(windows);

  ClassifierNet net;
  {
    ArchConfig enc;
    enc.base_width = cfg.base_width;
    enc.input_channels = 3;
    enc.H = cfg.H;
    enc.W = cfg.W;
    Rng rng(Rng::mix(cfg.seed, 0xC1A55u));
    net.init("C", enc, cfg.num_classes, rng);
  }

  TrainClassifierResult result;
  result.last_checkpoint =
      (std::filesystem::path(out_dir) / "classifier_last.ckpt").string();
  result.best_checkpoint =
      (std::filesystem::path(out_dir) / "classifier_best.ckpt").string();
  result.curve_csv = (std::filesystem::path(out_dir) / "accuracy.csv").string();
  std::ofstream curve(result.curve_csv, std::ios::binary);
  curve << "epoch,lr,train_loss,val_top1\n";

  auto val_top1 = [&]() {
    NoGradGuard ng;
    long correct = 0;
    std::size_t cur = 0;
    while (cur < val_idx.size()) {
      const std::size_t n = std::min<std::size_t>(64, val_idx.size() - cur);
      std::vector<Tensor> fs;
      for (std::size_t i = 0; i < n; ++i) fs.push_back(frames[val_idx[cur + i]]);
      auto logits = net.forward(stack_batch(fs));
      const int K = logits.dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.data() + static_cast<std::int64_t>(i) * K;
        int best = 0;
        for (int k = 1; k < K; ++k) {
          if (row[k] > row[best]) best = k;
        }
        if (best == manifest.records[val_idx[cur + i]].label) ++correct;
      }
      cur += n;
    }
    return static_cast<double>(correct) / static_cast<double>(val_idx.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
    const auto order = epoch_permutation(train_idx.size(), Rng::mix(cfg.seed, 0xAC0Du + epoch));
    double loss_sum = 0.0;
    long batches = 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - cursor);
      std::vector<Tensor> fs;
      std::vector<int> labels;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rec = train_idx[order[cursor + i]];
        fs.push_back(frames[rec]);
        labels.push_back(manifest.records[rec].label);
      }
      auto logits = net.forward(stack_batch(fs));
      auto loss = cross_entropy(logits, labels);
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        throw DivergenceError("classifier training diverged: loss is not finite");
      }
      auto params = net.params();
      zero_grad(params);
      backward(loss);
      adam_step<float>(params, static_cast<float>(lr), static_cast<float>(cfg.beta1),
                       static_cast<float>(cfg.beta2), static_cast<float>(cfg.adam_eps));
      zero_grad(params);
      loss_sum += loss_val;
      ++batches;
      cursor += n;
    }
    const double acc = val_top1();
    curve << epoch << ',' << lr << ',' << loss_sum / static_cast<double>(batches) << ','
          << acc << '\n';
    curve.flush();
    result.final_val_top1 = acc;
    if (acc > result.best_val_top1 || epoch == 0) {
      result.best_val_top1 = acc;
      save_classifier_checkpoint(result.best_checkpoint, net, cfg, source.kind);
    }
  }
  save_classifier_checkpoint(result.last_checkpoint, net, cfg, source.kind);
  return result;
}

}  // namespace ifs
