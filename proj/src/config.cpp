#include "eface/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "eface/errors.hpp"

namespace eface {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ConfigError("setting '" + key + "' has invalid value '" + text + "'");
  return value;
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& text) {
  std::array<T, N> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == N) throw ConfigError("setting '" + key + "' expects " + std::to_string(N) + " values");
    out[i++] = parse_number<T>(key, trim(item));
  }
  if (i != N) throw ConfigError("setting '" + key + "' expects " + std::to_string(N) + " values");
  return out;
}

template <typename T, std::size_t N>
std::string join(const std::array<T, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value, got '" + body + "'", lineno);
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ParseError("empty key", lineno);
    cfg.values_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const std::string* v = find(key);
  return v ? parse_number<int>(key, *v) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw ConfigError("setting '" + key + "' expects a boolean, got '" + *v + "'");
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValueConfig::text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

namespace {

const std::set<std::string>& detector_keys() {
  static const std::set<std::string> keys{
      "backbone.tag",     "backbone.widths", "backbone.depths", "pyramid_width",   "neck",
      "neck.depth",       "rfe",             "rfe.reduction",   "attn",            "attn_depth",
      "head.depth",       "head.width",      "head.prior_prob", "anchors.sizes",   "anchors.t_pos",
      "anchors.t_neg",    "loss.lambda",     "loss.alpha_t",    "loss.gamma",      "infer.score_thr",
      "infer.nms_iou",    "infer.topk_per_level",               "infer.max_det",   "seed"};
  return keys;
}

bool foreign_key(const std::string& key) {
  return key.rfind("train.", 0) == 0 || key.rfind("data.", 0) == 0 || key.rfind("run.", 0) == 0;
}

}  // namespace

DetectorConfig detector_config_from(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.values()) {
    if (!foreign_key(key) && detector_keys().count(key) == 0) throw ConfigError("unknown setting '" + key + "'");
  }
  DetectorConfig cfg;
  if (const auto* tag = kv.find("backbone.tag")) cfg.backbone = BackboneConfig::from_tag(*tag);
  if (const auto* w = kv.find("backbone.widths")) cfg.backbone.stage_widths = parse_list<int, 4>("backbone.widths", *w);
  if (const auto* d = kv.find("backbone.depths")) cfg.backbone.stage_depths = parse_list<int, 4>("backbone.depths", *d);
  cfg.pyramid_width = kv.get_int("pyramid_width", cfg.pyramid_width);
  if (const auto* n = kv.find("neck")) cfg.neck = parse_neck_kind(*n);
  cfg.neck_depth = kv.get_int("neck.depth", cfg.neck_depth);
  cfg.use_rfe = kv.get_bool("rfe", cfg.use_rfe);
  cfg.rfe_reduction = kv.get_int("rfe.reduction", cfg.rfe_reduction);
  cfg.use_attention = kv.get_bool("attn", cfg.use_attention);
  cfg.attn_depth = kv.get_int("attn_depth", cfg.attn_depth);
  cfg.head_depth = kv.get_int("head.depth", cfg.head_depth);
  cfg.head_width = kv.get_int("head.width", cfg.head_width);
  cfg.prior_prob = kv.get_double("head.prior_prob", cfg.prior_prob);
  if (const auto* s = kv.find("anchors.sizes")) cfg.anchors.sizes = parse_list<double, 6>("anchors.sizes", *s);
  cfg.anchors.t_pos = kv.get_double("anchors.t_pos", cfg.anchors.t_pos);
  cfg.anchors.t_neg = kv.get_double("anchors.t_neg", cfg.anchors.t_neg);
  cfg.loss.lambda = kv.get_double("loss.lambda", cfg.loss.lambda);
  cfg.loss.alpha_t = kv.get_double("loss.alpha_t", cfg.loss.alpha_t);
  cfg.loss.gamma = kv.get_double("loss.gamma", cfg.loss.gamma);
  cfg.infer.score_thr = kv.get_double("infer.score_thr", cfg.infer.score_thr);
  cfg.infer.nms_iou = kv.get_double("infer.nms_iou", cfg.infer.nms_iou);
  cfg.infer.topk_per_level = kv.get_int("infer.topk_per_level", cfg.infer.topk_per_level);
  cfg.infer.max_det = kv.get_int("infer.max_det", cfg.infer.max_det);
  if (const auto* s = kv.find("seed")) cfg.seed = parse_number<std::uint64_t>("seed", *s);
  return cfg;
}

KeyValueConfig to_key_values(const DetectorConfig& cfg) {
  KeyValueConfig kv;
  kv.set("backbone.tag", cfg.backbone.scaling_tag);
  kv.set("backbone.widths", join(cfg.backbone.stage_widths));
  kv.set("backbone.depths", join(cfg.backbone.stage_depths));
  kv.set("pyramid_width", std::to_string(cfg.pyramid_width));
  kv.set("neck", std::string(to_string(cfg.neck)));
  kv.set("neck.depth", std::to_string(cfg.neck_depth));
  kv.set("rfe", cfg.use_rfe ? "true" : "false");
  kv.set("rfe.reduction", std::to_string(cfg.rfe_reduction));
  kv.set("attn", cfg.use_attention ? "true" : "false");
  kv.set("attn_depth", std::to_string(cfg.attn_depth));
  kv.set("head.depth", std::to_string(cfg.head_depth));
  kv.set("head.width", std::to_string(cfg.head_width));
  kv.set("head.prior_prob", format_double(cfg.prior_prob));
  kv.set("anchors.sizes", join(cfg.anchors.sizes));
  kv.set("anchors.t_pos", format_double(cfg.anchors.t_pos));
  kv.set("anchors.t_neg", format_double(cfg.anchors.t_neg));
  kv.set("loss.lambda", format_double(cfg.loss.lambda));
  kv.set("loss.alpha_t", format_double(cfg.loss.alpha_t));
  kv.set("loss.gamma", format_double(cfg.loss.gamma));
  kv.set("infer.score_thr", format_double(cfg.infer.score_thr));
  kv.set("infer.nms_iou", format_double(cfg.infer.nms_iou));
  kv.set("infer.topk_per_level", std::to_string(cfg.infer.topk_per_level));
  kv.set("infer.max_det", std::to_string(cfg.infer.max_det));
  kv.set("seed", std::to_string(cfg.seed));
  return kv;
}

}  // namespace eface
