#include "eface/nn.hpp"

#include <cmath>

#include "eface/errors.hpp"

namespace eface {

Conv2d::Conv2d(ParamStore& store, Rng& rng, const std::string& name, int in_ch, int out_ch, int kh, int kw, int stride,
               bool with_bias, Init init)
    : name_(name), in_ch_(in_ch), out_ch_(out_ch) {
  if (in_ch <= 0 || out_ch <= 0 || kh <= 0 || kw <= 0 || stride <= 0) {
    throw ConfigError("conv '" + name + "': non-positive extent");
  }
  geom_ = ConvGeometry{stride, kh / 2, kw / 2};
  weight_ = &store.create(name + ".weight", Shape{out_ch, in_ch, kh, kw});
  if (init != Init::zeros) {
    const double sd = init == Init::small ? 0.01 : std::sqrt(2.0 / (in_ch * kh * kw));
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : weight_->value.values()) v = dist(rng);
  }
  if (with_bias) bias_ = &store.create(name + ".bias", Shape{1, out_ch, 1, 1}, false);
}

Var Conv2d::operator()(const Var& x) const {
  Var out = conv2d(x, *weight_, bias_, geom_);
  if (OpRecorder* rec = active_recorder()) {
    const Shape& ws = weight_->value.shape();
    const Shape& os = out->shape();
    const std::int64_t params = static_cast<std::int64_t>(weight_->value.size()) + (bias_ ? out_ch_ : 0);
    const std::int64_t macs = static_cast<std::int64_t>(ws.h) * ws.w * ws.c * ws.n * os.h * os.w * os.n;
    rec->record(OpRecord{name_, "conv", params, macs});
  }
  return out;
}

int default_groups(int channels) {
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int channels)
    : name_(name), groups_(default_groups(channels)) {
  gamma_ = &store.create(name + ".gamma", Shape{1, channels, 1, 1}, false);
  gamma_->value.fill(1.0);
  beta_ = &store.create(name + ".beta", Shape{1, channels, 1, 1}, false);
}

Var GroupNorm::operator()(const Var& x) const {
  if (OpRecorder* rec = active_recorder()) {
    rec->record(OpRecord{name_, "norm", static_cast<std::int64_t>(gamma_->value.size() + beta_->value.size()), 0});
  }
  return group_norm(x, *gamma_, *beta_, groups_);
}

ConvNormAct::ConvNormAct(ParamStore& store, Rng& rng, const std::string& name, int in_ch, int out_ch, int k,
                         int stride, bool norm, bool act)
    : conv_(store, rng, name + ".conv", in_ch, out_ch, k, k, stride, !norm), act_(act) {
  if (norm) norm_.emplace(store, name + ".norm", out_ch);
}

Var ConvNormAct::operator()(const Var& x) const {
  Var y = conv_(x);
  if (norm_) y = (*norm_)(y);
  return act_ ? silu(y) : y;
}

}  // namespace eface
