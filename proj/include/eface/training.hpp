#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eface/config.hpp"
#include "eface/detector.hpp"

namespace eface {

struct TrainSchedule {
  std::string optimizer = "adamw";
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience = 3;
  double factor = 0.1;
  double min_lr = 1e-8;
  double plateau_threshold = 1e-3;  // relative improvement needed to reset patience
  int batch_size = 4;

  void validate() const;
};

TrainSchedule train_schedule_from(const KeyValueConfig& kv);
void write_train_schedule(const TrainSchedule& s, KeyValueConfig& kv);

// Adam with decoupled weight decay, applied only to parameters flagged for decay.
class AdamW {
 public:
  AdamW(ParamStore& store, const TrainSchedule& s);

  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  ParamStore* store_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// Cuts the rate by `factor` after `patience` consecutive epochs without a
// relative improvement of `threshold` over the best metric, never going
// below `min_lr`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, int patience, double factor, double min_lr, double threshold);

  // Feed one epoch metric; returns the rate for the next epoch.
  double step(double metric);
  double lr() const { return lr_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double min_lr_;
  double threshold_;
  double best_;
  int bad_epochs_ = 0;
};

struct Sample {
  Tensor image;  // [1,3,H,W] in [0,1]
  BoxList gt;    // training targets (invalid faces already removed)
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(Detector& model, const TrainSchedule& schedule);

  // Matches targets, evaluates the loss, applies one AdamW update at the
  // current scheduler rate.
  LossReport train_step(std::span<const Sample> batch);
  LossReport train_step(std::span<const Sample> batch, double lr);

  // Loss without an update.
  LossReport evaluate_loss(std::span<const Sample> batch) const;

  double lr() const { return scheduler_.lr(); }
  PlateauScheduler& scheduler() { return scheduler_; }
  const TrainSchedule& schedule() const { return schedule_; }
  Detector& model() { return *model_; }

  // Where to write a checkpoint if a step produces a non-finite loss.
  void set_dump_path(std::filesystem::path p) { dump_path_ = std::move(p); }

 private:
  DetectionTargets targets_for(std::span<const Sample> batch) const;

  Detector* model_;
  TrainSchedule schedule_;
  AdamW optimizer_;
  PlateauScheduler scheduler_;
  std::filesystem::path dump_path_;
};

struct EpochMetrics {
  int epoch = 0;
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double total = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

struct FitOptions {
  int epochs = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const EpochMetrics&)> on_epoch;
  // Per-batch transform (augmentation); receives a copy of each sample.
  std::function<Sample(const Sample&, std::uint64_t)> transform;
};

// Runs epochs of train_step, steps the plateau schedule on the epoch-mean
// total loss, appends metrics.csv and keeps last.ckpt / best.ckpt in out_dir.
std::vector<EpochMetrics> fit(Trainer& trainer, std::span<const Sample> dataset, const FitOptions& opts);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// Versioned binary archive: config snapshot plus named parameter arrays.
void save_checkpoint(const Detector& model, const std::filesystem::path& path, const KeyValueConfig& extra = {});

struct Checkpoint {
  std::uint32_t version = 0;
  KeyValueConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
// Rebuilds the detector from the stored config and restores every parameter.
std::unique_ptr<Detector> load_detector(const std::filesystem::path& path);
// Restores parameters into an already built model; names and shapes must match.
void restore_parameters(Detector& model, const Checkpoint& ckpt);

}  // namespace eface
