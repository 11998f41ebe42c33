#include "dla/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <sstream>

#include "dla/errors.hpp"

namespace dla {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": '" + s + "' is not a number");
  return v;
}

std::int64_t parse_int(const std::string& key, const std::string& s) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": '" + s + "' is not an integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError(key + ": '" + s + "' is not a boolean");
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t p = 0;
  while (true) {
    auto q = s.find(',', p);
    std::string item = s.substr(p, q == std::string::npos ? std::string::npos : q - p);
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    out.push_back(item);
    if (q == std::string::npos) break;
    p = q + 1;
  }
  return out;
}

template <class T, class F>
ConfigKey<T> dbl(std::string key, std::string help, F field) {
  return {key, std::move(help), [field](const T& c) { return format_double(field(const_cast<T&>(c))); },
          [field, key](T& c, const std::string& s) { field(c) = parse_double(key, s); }};
}

template <class T, class F>
ConfigKey<T> integer(std::string key, std::string help, F field) {
  return {key, std::move(help), [field](const T& c) { return std::to_string(field(const_cast<T&>(c))); },
          [field, key](T& c, const std::string& s) {
            using V = std::remove_reference_t<decltype(field(c))>;
            const auto v = parse_int(key, s);
            if constexpr (std::is_unsigned_v<V>)
              if (v < 0) throw ConfigError(key + " must be >= 0");
            field(c) = static_cast<V>(v);
          }};
}

template <class T, class F>
ConfigKey<T> boolean(std::string key, std::string help, F field) {
  return {key, std::move(help), [field](const T& c) { return field(const_cast<T&>(c)) ? "true" : "false"; },
          [field, key](T& c, const std::string& s) { field(c) = parse_bool(key, s); }};
}

template <class T>
void add_optim_keys(std::vector<ConfigKey<T>>& keys) {
  keys.push_back(dbl<T>("optim.learning_rate", "SGD step size", [](T& c) -> double& { return c.optim.learning_rate; }));
  keys.push_back(dbl<T>("optim.momentum", "SGD momentum", [](T& c) -> double& { return c.optim.momentum; }));
  keys.push_back(dbl<T>("optim.weight_decay", "L2 weight decay", [](T& c) -> double& { return c.optim.weight_decay; }));
  keys.push_back(dbl<T>("optim.clip_norm", "global gradient-norm clip, <= 0 disables",
                        [](T& c) -> double& { return c.optim.clip_norm; }));
  keys.push_back(dbl<T>("optim.decay_at", "fraction of iterations after which the step size decays",
                        [](T& c) -> double& { return c.optim.decay_at; }));
  keys.push_back(dbl<T>("optim.decay_factor", "step size multiplier after decay_at",
                        [](T& c) -> double& { return c.optim.decay_factor; }));
  keys.push_back(integer<T>("optim.warmup_iters", "linear warm-up iterations",
                            [](T& c) -> int& { return c.optim.warmup_iters; }));
}

template <class T>
std::string to_ini_impl(const T& cfg, const std::vector<ConfigKey<T>>& keys) {
  pt::ptree tree;
  for (const auto& k : keys) tree.put(pt::ptree::path_type(k.key, '.'), k.get(cfg));
  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

template <class T>
void apply_one(T& cfg, const std::vector<ConfigKey<T>>& keys, const std::string& key, const std::string& value) {
  for (const auto& k : keys)
    if (k.key == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown configuration key '" + key + "'");
}

template <class T>
void apply_ini_impl(T& cfg, const std::vector<ConfigKey<T>>& keys, const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("configuration key '" + section + "' must be inside a section");
    for (const auto& [name, value] : body) apply_one(cfg, keys, section + "." + name, value.data());
  }
}

template <class T>
void apply_override_impl(T& cfg, const std::vector<ConfigKey<T>>& keys, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  apply_one(cfg, keys, assignment.substr(0, eq), assignment.substr(eq + 1));
}

template <class T>
std::string describe_impl(const std::vector<ConfigKey<T>>& keys) {
  const T defaults{};
  std::string out;
  for (const auto& k : keys) {
    std::string line = "  " + k.key;
    if (line.size() < 34) line.resize(34, ' ');
    line += " = " + k.get(defaults);
    if (line.size() < 52) line.resize(52, ' ');
    out += line + "  " + k.help + "\n";
  }
  return out;
}

}  // namespace

double OptimConfig::lr_scale(std::int64_t iteration, std::int64_t total_iterations) const {
  double s = 1.0;
  if (warmup_iters > 0 && iteration < warmup_iters) s = double(iteration + 1) / double(warmup_iters);
  if (iteration >= static_cast<std::int64_t>(decay_at * double(total_iterations))) s *= decay_factor;
  return s;
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) throw ConfigError("optim.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (!(decay_at >= 0.0 && decay_at <= 1.0)) throw ConfigError("optim.decay_at must lie in [0,1]");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("optim.decay_factor must lie in (0,1]");
  if (warmup_iters < 0) throw ConfigError("optim.warmup_iters must be >= 0");
}

void AdaptConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  TeacherSchedule s = schedule;
  if (s.n_update <= 0) s.n_update = 1;
  s.validate();
  consensus.validate();
  if (!(hard_threshold > 0.0 && hard_threshold < 1.0)) throw ConfigError("hard_threshold must lie in (0,1)");
  if (!(ignore_floor >= 0.0 && ignore_floor < 1.0)) throw ConfigError("ignore_floor must lie in [0,1)");
  weights.validate();
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  augment.validate();
  optim.validate();
}

void SourceTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  detector.validate();
  optim.validate();
}

const std::vector<ConfigKey<AdaptConfig>>& adapt_config_keys() {
  using T = AdaptConfig;
  static const std::vector<ConfigKey<T>> keys = [] {
    std::vector<ConfigKey<T>> k;
    k.push_back(integer<T>("run.epochs", "adaptation epochs", [](T& c) -> int& { return c.epochs; }));
    k.push_back(integer<T>("run.eval_every", "evaluate every N epochs (0: final only)",
                           [](T& c) -> int& { return c.eval_every; }));
    k.push_back(integer<T>("run.seed", "seed for augmentation", [](T& c) -> std::uint64_t& { return c.seed; }));
    k.push_back(dbl<T>("schedule.pi_dynamic", "EMA momentum of the dynamic teacher",
                       [](T& c) -> double& { return c.schedule.pi_dynamic; }));
    k.push_back(dbl<T>("schedule.pi_static", "EMA momentum of the static teacher",
                       [](T& c) -> double& { return c.schedule.pi_static; }));
    k.push_back(integer<T>("schedule.n_update", "dynamic teacher update interval (0: samples/10)",
                           [](T& c) -> std::int64_t& { return c.schedule.n_update; }));
    k.push_back(dbl<T>("consensus.match_iou", "IoU for cross-teacher matches",
                       [](T& c) -> double& { return c.consensus.match_iou; }));
    k.push_back(dbl<T>("consensus.boost", "score multiplier for matched pairs",
                       [](T& c) -> double& { return c.consensus.boost; }));
    k.push_back(dbl<T>("consensus.penalty", "score multiplier for unmatched detections",
                       [](T& c) -> double& { return c.consensus.penalty; }));
    k.push_back(dbl<T>("consensus.keep_threshold", "minimum pseudo-label score",
                       [](T& c) -> double& { return c.consensus.keep_threshold; }));
    k.push_back({"consensus.keep_per_category", "comma list of per-category floors (empty: shared)",
                 [](const T& c) { return join(c.consensus.keep_per_category); },
                 [](T& c, const std::string& s) {
                   c.consensus.keep_per_category.clear();
                   for (const auto& item : split(s))
                     c.consensus.keep_per_category.push_back(parse_double("consensus.keep_per_category", item));
                 }});
    k.push_back(dbl<T>("consensus.nms_iou", "NMS IoU on pseudo labels",
                       [](T& c) -> double& { return c.consensus.nms_iou; }));
    k.push_back(dbl<T>("consensus.hard_threshold", "score threshold in hard selection mode",
                       [](T& c) -> double& { return c.hard_threshold; }));
    k.push_back(dbl<T>("consensus.ignore_floor", "teacher score above which dropped detections are not negatives (0: off)",
                       [](T& c) -> double& { return c.ignore_floor; }));
    static const char* term_help[6] = {"RPN loss", "ROI loss", "soft-label KL distillation",
                                       "feature distillation", "entropy", "contrastive"};
    for (std::size_t i = 0; i < 6; ++i)
      k.push_back(dbl<T>(std::string("weights.") + kLossTermNames[i], std::string("weight of the ") + term_help[i] + " term",
                         [i](T& c) -> double& { return c.weights.w[i]; }));
    k.push_back(dbl<T>("weights.gamma_e", "entropy coefficient of the weighting factor",
                       [](T& c) -> double& { return c.weights.gamma_e; }));
    k.push_back(dbl<T>("weights.gamma_p", "pseudo-label count coefficient of the weighting factor",
                       [](T& c) -> double& { return c.weights.gamma_p; }));
    k.push_back(dbl<T>("weights.factor_cap", "upper clamp of the weighting factor",
                       [](T& c) -> double& { return c.weights.factor_cap; }));
    k.push_back(dbl<T>("weights.temperature", "contrastive temperature",
                       [](T& c) -> double& { return c.temperature; }));
    k.push_back({"weights.kl_direction", "pseudo_to_student or student_to_pseudo",
                 [](const T& c) {
                   return std::string(c.kl_direction == KlDirection::PseudoToStudent ? "pseudo_to_student"
                                                                                     : "student_to_pseudo");
                 },
                 [](T& c, const std::string& s) {
                   if (s == "pseudo_to_student")
                     c.kl_direction = KlDirection::PseudoToStudent;
                   else if (s == "student_to_pseudo")
                     c.kl_direction = KlDirection::StudentToPseudo;
                   else
                     throw ConfigError("weights.kl_direction: unknown value '" + s + "'");
                 }});
    k.push_back(dbl<T>("augment.weak_brightness", "weak view brightness jitter",
                       [](T& c) -> double& { return c.augment.weak_brightness; }));
    k.push_back(dbl<T>("augment.strong_brightness", "strong view brightness jitter",
                       [](T& c) -> double& { return c.augment.strong_brightness; }));
    k.push_back(dbl<T>("augment.strong_contrast", "strong view contrast jitter",
                       [](T& c) -> double& { return c.augment.strong_contrast; }));
    k.push_back(dbl<T>("augment.noise_sigma", "strong view Gaussian noise",
                       [](T& c) -> double& { return c.augment.noise_sigma; }));
    k.push_back(integer<T>("augment.max_erased", "strong view erased rectangles (0..N)",
                           [](T& c) -> int& { return c.augment.max_erased; }));
    k.push_back(dbl<T>("augment.max_erase_area", "largest erased rectangle, fraction of page",
                       [](T& c) -> double& { return c.augment.max_erase_area; }));
    add_optim_keys(k);
    k.push_back({"ablation.selection_mode", "consensus or hard",
                 [](const T& c) {
                   return std::string(c.ablation.selection_mode == SelectionMode::Consensus ? "consensus" : "hard");
                 },
                 [](T& c, const std::string& s) {
                   if (s == "consensus")
                     c.ablation.selection_mode = SelectionMode::Consensus;
                   else if (s == "hard")
                     c.ablation.selection_mode = SelectionMode::Hard;
                   else
                     throw ConfigError("ablation.selection_mode: unknown value '" + s + "'");
                 }});
    k.push_back(boolean<T>("ablation.use_kl", "enable the soft-label KL term",
                           [](T& c) -> bool& { return c.ablation.use_kl; }));
    k.push_back(boolean<T>("ablation.use_auxiliary", "enable feature, entropy and contrastive terms",
                           [](T& c) -> bool& { return c.ablation.use_auxiliary; }));
    return k;
  }();
  return keys;
}

const std::vector<ConfigKey<SourceTrainConfig>>& source_config_keys() {
  using T = SourceTrainConfig;
  static const std::vector<ConfigKey<T>> keys = [] {
    std::vector<ConfigKey<T>> k;
    k.push_back(integer<T>("run.epochs", "training epochs", [](T& c) -> int& { return c.epochs; }));
    k.push_back(integer<T>("run.eval_every", "evaluate every N epochs (0: final only)",
                           [](T& c) -> int& { return c.eval_every; }));
    k.push_back(integer<T>("run.seed", "seed for initialization", [](T& c) -> std::uint64_t& { return c.seed; }));
    add_optim_keys(k);
    k.push_back({"detector.channels", "backbone channels per stage",
                 [](const T& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.detector.channels.size(); ++i)
                     out += (i ? "," : "") + std::to_string(c.detector.channels[i]);
                   return out;
                 },
                 [](T& c, const std::string& s) {
                   c.detector.channels.clear();
                   for (const auto& item : split(s))
                     c.detector.channels.push_back(static_cast<int>(parse_int("detector.channels", item)));
                 }});
    k.push_back(integer<T>("detector.roi_hidden", "hidden units of the region head",
                           [](T& c) -> int& { return c.detector.roi_hidden; }));
    k.push_back(integer<T>("detector.roi_pool", "RoIAlign output size",
                           [](T& c) -> int& { return c.detector.roi_pool; }));
    k.push_back(integer<T>("detector.input_pool", "input average-pool factor",
                           [](T& c) -> int& { return c.detector.input_pool; }));
    k.push_back(integer<T>("detector.roi_batch", "sampled regions per image",
                           [](T& c) -> int& { return c.detector.roi_batch; }));
    k.push_back(dbl<T>("detector.score_floor", "minimum detection score at inference",
                       [](T& c) -> double& { return c.detector.score_floor; }));
    k.push_back(dbl<T>("detector.nms_iou", "per-category NMS IoU at inference",
                       [](T& c) -> double& { return c.detector.nms_iou; }));
    return k;
  }();
  return keys;
}

std::string to_ini(const AdaptConfig& cfg) { return to_ini_impl(cfg, adapt_config_keys()); }
std::string to_ini(const SourceTrainConfig& cfg) { return to_ini_impl(cfg, source_config_keys()); }
void apply_ini(AdaptConfig& cfg, const std::string& text) { apply_ini_impl(cfg, adapt_config_keys(), text); }
void apply_ini(SourceTrainConfig& cfg, const std::string& text) { apply_ini_impl(cfg, source_config_keys(), text); }
void apply_override(AdaptConfig& cfg, const std::string& a) { apply_override_impl(cfg, adapt_config_keys(), a); }
void apply_override(SourceTrainConfig& cfg, const std::string& a) {
  apply_override_impl(cfg, source_config_keys(), a);
}
std::string describe_keys(const std::vector<ConfigKey<AdaptConfig>>& keys) { return describe_impl(keys); }
std::string describe_keys(const std::vector<ConfigKey<SourceTrainConfig>>& keys) { return describe_impl(keys); }

}  // namespace dla
