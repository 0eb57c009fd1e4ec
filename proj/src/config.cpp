#include "uret/config.hpp"

#include <charconv>

namespace uret {

namespace {

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

bool parse_int(const std::string& v, int64_t& out) {
  const char* b = v.data();
  auto res = std::from_chars(b, b + v.size(), out);
  return res.ec == std::errc() && res.ptr == b + v.size();
}

bool parse_real(const std::string& v, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(v, &pos);
    return pos == v.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

const std::map<std::string, RunConfig::SchemaEntry>& RunConfig::schema() {
  using E = SchemaEntry;
  static const std::map<std::string, E> kSchema = {
      // backbone
      {"backbone.dim", {Type::kInt, "192"}},
      {"backbone.depth", {Type::kInt, "6"}},
      {"backbone.heads", {Type::kInt, "3"}},
      {"backbone.patch_size", {Type::kInt, "16"}},
      {"backbone.mlp_ratio", {Type::kReal, "4.0"}},
      {"backbone.elim_blocks", {Type::kIntList, "2,4"}},
      {"backbone.keep_ratio", {Type::kReal, "0.7"}},
      // uncertainty modules
      {"uncert.heads", {Type::kInt, "3"}},
      {"uncert.logvar_clamp", {Type::kReal, "10.0"}},
      {"uncert.sample_at_eval", {Type::kBool, "false"}},
      // losses
      {"loss.lambda_iou", {Type::kReal, "2"}},
      {"loss.lambda_l1", {Type::kReal, "5"}},
      {"loss.alpha_kl", {Type::kReal, "0.001"}},
      // head
      {"head.window_penalty", {Type::kBool, "true"}},
      {"head.channels", {Type::kInt, "32"}},
      // model assembly
      {"model.variant", {Type::kString, "full"}},
      // crop geometry
      {"data.template_factor", {Type::kReal, "2.0"}},
      {"data.template_side", {Type::kInt, "96"}},
      {"data.search_factor", {Type::kReal, "4.0"}},
      {"data.search_side", {Type::kInt, "192"}},
      // trainer
      {"train.lr_backbone", {Type::kReal, "0.000005"}},
      {"train.lr_other", {Type::kReal, "0.00005"}},
      {"train.weight_decay", {Type::kReal, "0.0001"}},
      {"train.lr_decay_factor", {Type::kReal, "0.2"}},
      {"train.lr_decay_epoch", {Type::kInt, "50"}},
      {"train.epochs", {Type::kInt, "1"}},
      {"train.batch_size", {Type::kInt, "8"}},
      {"train.steps", {Type::kInt, "200"}},
      {"train.steps_per_epoch", {Type::kInt, "100"}},
      {"train.seed", {Type::kInt, "0"}},
      {"train.max_gap", {Type::kInt, "50"}},
      {"train.center_jitter", {Type::kReal, "0.25"}},
      {"train.scale_jitter", {Type::kReal, "1.25"}},
      {"train.clip_norm", {Type::kReal, "5.0"}},
      {"train.warmup_steps", {Type::kInt, "0"}},
      {"train.log_every", {Type::kInt, "10"}},
      {"train.workers", {Type::kInt, "2"}},
      // tracker
      {"track.workers", {Type::kInt, "1"}},
      // synthetic data
      {"synth.n_sequences", {Type::kInt, "4"}},
      {"synth.n_frames", {Type::kInt, "64"}},
      {"synth.width", {Type::kInt, "192"}},
      {"synth.height", {Type::kInt, "192"}},
      {"synth.object_size", {Type::kReal, "40"}},
      {"synth.speed", {Type::kReal, "3.0"}},
      {"synth.event_threshold", {Type::kReal, "0.12"}},
      {"synth.misalign", {Type::kRealList, "0,0,0"}},
      {"synth.noise", {Type::kReal, "0.0"}},
      {"synth.event_scale", {Type::kReal, "1.0"}},
      {"synth.sub_frames", {Type::kInt, "4"}},
      {"synth.frame_interval_us", {Type::kInt, "20000"}},
      {"synth.seed", {Type::kInt, "7"}},
  };
  return kSchema;
}

RunConfig::RunConfig() {
  for (const auto& [key, entry] : schema()) values_[key] = entry.default_value;
}

void RunConfig::validate(const std::string& key, const std::string& value) const {
  auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError("unknown config key: " + key);
  const Type type = it->second.type;
  int64_t i;
  double d;
  bool b;
  switch (type) {
    case Type::kInt:
      if (!parse_int(value, i)) throw ConfigError("config key " + key + ": bad integer '" + value + "'");
      break;
    case Type::kReal:
      if (!parse_real(value, d)) throw ConfigError("config key " + key + ": bad number '" + value + "'");
      break;
    case Type::kBool:
      if (!parse_bool(value, b)) throw ConfigError("config key " + key + ": bad boolean '" + value + "'");
      break;
    case Type::kString:
      break;
    case Type::kIntList:
      if (!value.empty())
        for (const auto& part : split(value, ','))
          if (!parse_int(trim(part), i))
            throw ConfigError("config key " + key + ": bad integer list '" + value + "'");
      break;
    case Type::kRealList:
      if (!value.empty())
        for (const auto& part : split(value, ','))
          if (!parse_real(trim(part), d))
            throw ConfigError("config key " + key + ": bad number list '" + value + "'");
      break;
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  const std::string v = trim(value);
  validate(k, v);
  values_[k] = v;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file " + path.string() + ": line " + std::to_string(line_no) +
                        " is not 'key = value'");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

int64_t RunConfig::get_int(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  int64_t v;
  if (!parse_int(it->second, v)) throw ConfigError("config key " + key + " is not an integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  double v;
  if (!parse_real(it->second, v)) throw ConfigError("config key " + key + " is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  bool v;
  if (!parse_bool(it->second, v)) throw ConfigError("config key " + key + " is not a boolean");
  return v;
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  const std::string v = get_string(key);
  if (trim(v).empty()) return out;
  for (const auto& part : split(v, ',')) {
    int64_t i;
    if (!parse_int(trim(part), i)) throw ConfigError("config key " + key + " is not an integer list");
    out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
  std::vector<double> out;
  const std::string v = get_string(key);
  if (trim(v).empty()) return out;
  for (const auto& part : split(v, ',')) {
    double d;
    if (!parse_real(trim(part), d)) throw ConfigError("config key " + key + " is not a number list");
    out.push_back(d);
  }
  return out;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

uint64_t RunConfig::hash() const { return fnv1a64(canonical_text()); }

}  // namespace uret
