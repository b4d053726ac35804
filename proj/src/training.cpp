#include "eface/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "eface/errors.hpp"

namespace eface {

void TrainSchedule::validate() const {
  if (optimizer != "adamw") throw ConfigError("train.optimizer must be adamw");
  if (!(lr0 >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (!(min_lr >= 0.0)) throw ConfigError("train.min_lr must be non-negative");
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("train.factor must lie in (0,1)");
  if (patience < 1) throw ConfigError("train.patience must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
}

TrainSchedule train_schedule_from(const KeyValueConfig& kv) {
  TrainSchedule s;
  s.optimizer = kv.get_string("train.optimizer", s.optimizer);
  s.lr0 = kv.get_double("train.lr", s.lr0);
  s.weight_decay = kv.get_double("train.weight_decay", s.weight_decay);
  s.patience = kv.get_int("train.patience", s.patience);
  s.factor = kv.get_double("train.factor", s.factor);
  s.min_lr = kv.get_double("train.min_lr", s.min_lr);
  s.plateau_threshold = kv.get_double("train.plateau_threshold", s.plateau_threshold);
  s.batch_size = kv.get_int("train.batch_size", s.batch_size);
  s.validate();
  return s;
}

void write_train_schedule(const TrainSchedule& s, KeyValueConfig& kv) {
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv.set("train.optimizer", s.optimizer);
  kv.set("train.lr", fmt(s.lr0));
  kv.set("train.weight_decay", fmt(s.weight_decay));
  kv.set("train.patience", std::to_string(s.patience));
  kv.set("train.factor", fmt(s.factor));
  kv.set("train.min_lr", fmt(s.min_lr));
  kv.set("train.plateau_threshold", fmt(s.plateau_threshold));
  kv.set("train.batch_size", std::to_string(s.batch_size));
}

AdamW::AdamW(ParamStore& store, const TrainSchedule& s)
    : store_(&store), beta1_(s.beta1), beta2_(s.beta2), eps_(s.adam_eps), weight_decay_(s.weight_decay) {
  for (const auto& p : store.all()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& params = store_->all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const double decay = p.decay ? lr * weight_decay_ : 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= decay * p.value[k];
      p.value[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr0, int patience, double factor, double min_lr, double threshold)
    : lr_(std::max(lr0, min_lr)),
      patience_(patience),
      factor_(factor),
      min_lr_(min_lr),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double metric) {
  if (metric < best_ * (1.0 - threshold_) || best_ == std::numeric_limits<double>::infinity()) {
    best_ = metric;
    bad_epochs_ = 0;
    return lr_;
  }
  if (++bad_epochs_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_epochs_ = 0;
  }
  return lr_;
}

Trainer::Trainer(Detector& model, const TrainSchedule& schedule)
    : model_(&model),
      schedule_(schedule),
      optimizer_(model.params(), schedule),
      scheduler_(schedule.lr0, schedule.patience, schedule.factor, schedule.min_lr, schedule.plateau_threshold) {
  schedule.validate();
}

DetectionTargets Trainer::targets_for(std::span<const Sample> batch) const {
  if (batch.empty()) throw TrainingError("empty batch");
  const Shape& s = batch.front().image.shape();
  const AnchorSet anchors = generate_anchors(s.h, s.w, model_->config().anchors);
  std::vector<MatchResult> matches;
  matches.reserve(batch.size());
  for (const auto& sample : batch) {
    matches.push_back(
        match_anchors(anchors, sample.gt, model_->config().anchors.t_pos, model_->config().anchors.t_neg));
  }
  return collect_targets(matches);
}

namespace {

Tensor stack_images(std::span<const Sample> batch) {
  std::vector<Tensor> imgs;
  imgs.reserve(batch.size());
  for (const auto& s : batch) imgs.push_back(s.image);
  return Tensor::stack(imgs);
}

struct LossVars {
  Var cls;
  Var reg;
};

LossVars loss_vars(const Detector& model, std::span<const Sample> batch, const DetectionTargets& targets) {
  const auto outputs = model.forward(stack_images(batch));
  std::vector<Var> cls;
  std::vector<Var> reg;
  for (const auto& o : outputs) {
    cls.push_back(o.cls);
    reg.push_back(o.reg);
  }
  return LossVars{focal_loss_from_logits(cls, targets, model.config().loss), smooth_l1_from_maps(reg, targets)};
}

}  // namespace

LossReport Trainer::evaluate_loss(std::span<const Sample> batch) const {
  NoGradGuard no_grad;
  const DetectionTargets targets = targets_for(batch);
  const LossVars lv = loss_vars(*model_, batch, targets);
  return total_loss(lv.cls->value[0], lv.reg->value[0], model_->config().loss, targets.num_pos);
}

LossReport Trainer::train_step(std::span<const Sample> batch) { return train_step(batch, scheduler_.lr()); }

LossReport Trainer::train_step(std::span<const Sample> batch, double lr) {
  const DetectionTargets targets = targets_for(batch);
  model_->params().zero_grad();
  const LossVars lv = loss_vars(*model_, batch, targets);
  LossReport report;
  try {
    report = total_loss(lv.cls->value[0], lv.reg->value[0], model_->config().loss, targets.num_pos);
  } catch (const NonFiniteError& e) {
    std::string where;
    if (!dump_path_.empty()) {
      save_checkpoint(*model_, dump_path_);
      where = "; model state dumped to " + dump_path_.string();
    }
    throw TrainingError(std::string("training aborted: ") + e.what() + where);
  }
  const Var total = add_scaled(lv.cls, lv.reg, model_->config().loss.lambda);
  backward(total);
  optimizer_.step(lr);
  return report;
}

std::string metrics_csv_header() { return "epoch,cls_loss,reg_loss,total,lr\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.cls_loss, m.reg_loss, m.total, m.lr);
  return buf;
}

std::vector<EpochMetrics> fit(Trainer& trainer, std::span<const Sample> dataset, const FitOptions& opts) {
  if (dataset.empty()) throw TrainingError("cannot fit on an empty dataset");
  if (opts.epochs < 0) throw ConfigError("epochs must be non-negative");
  const int batch_size = trainer.schedule().batch_size;
  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir / "metrics.csv", std::ios::trunc);
    if (!log) throw TrainingError("cannot write " + (opts.out_dir / "metrics.csv").string());
    log << metrics_csv_header() << std::flush;
    trainer.set_dump_path(opts.out_dir / "nonfinite_dump.ckpt");
  }
  KeyValueConfig snapshot;
  write_train_schedule(trainer.schedule(), snapshot);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opts.seed);
  std::vector<EpochMetrics> history;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    if (opts.shuffle) std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = trainer.lr();
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      std::vector<Sample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        const Sample& s = dataset[order[i]];
        batch.push_back(opts.transform ? opts.transform(s, rng()) : s);
      }
      const LossReport r = trainer.train_step(batch);
      m.cls_loss += r.cls_loss;
      m.reg_loss += r.reg_loss;
      m.total += r.total;
      ++steps;
    }
    m.cls_loss /= steps;
    m.reg_loss /= steps;
    m.total /= steps;
    trainer.scheduler().step(m.total);
    history.push_back(m);
    if (!opts.out_dir.empty()) {
      log << metrics_csv_row(m) << std::flush;
      save_checkpoint(trainer.model(), opts.out_dir / "last.ckpt", snapshot);
      if (m.total < best) save_checkpoint(trainer.model(), opts.out_dir / "best.ckpt", snapshot);
    }
    best = std::min(best, m.total);
    if (opts.on_epoch) opts.on_epoch(m);
  }
  return history;
}

namespace {

constexpr char kMagic[8] = {'E', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const Detector& model, const std::filesystem::path& path, const KeyValueConfig& extra) {
  KeyValueConfig cfg = to_key_values(model.config());
  cfg.merge(extra);
  const std::string text = cfg.text();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& params = model.params().all();
    put<std::uint64_t>(os, params.size());
    for (const auto& p : params) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      const Shape& s = p->value.shape();
      for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  // Rename is atomic, so an interrupted save leaves the previous file intact.
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  Checkpoint ck;
  ck.version = get<std::uint32_t>(is, path);
  if (ck.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ck.version));
  }
  const auto text_len = get<std::uint64_t>(is, path);
  std::string text(text_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(text_len))) {
    throw std::runtime_error("truncated checkpoint " + path.string());
  }
  ck.config = KeyValueConfig::parse(text);
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint " + path.string());
    Shape s;
    s.n = get<std::int32_t>(is, path);
    s.c = get<std::int32_t>(is, path);
    s.h = get<std::int32_t>(is, path);
    s.w = get<std::int32_t>(is, path);
    Tensor t(s);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint " + path.string());
    }
    ck.params.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

void restore_parameters(Detector& model, const Checkpoint& ckpt) {
  auto& store = model.params();
  if (ckpt.params.size() != store.all().size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                     std::to_string(store.all().size()));
  }
  for (const auto& [name, value] : ckpt.params) {
    Parameter* p = store.find(name);
    if (p == nullptr) throw ShapeError("checkpoint parameter '" + name + "' not present in model");
    if (p->value.shape() != value.shape()) throw ShapeError("checkpoint parameter '" + name + "' has wrong shape");
    p->value = value;
  }
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  auto model = build(detector_config_from(ck.config));
  restore_parameters(*model, ck);
  return model;
}

}  // namespace eface
