#include "evssl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace evssl {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return value;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& text) {
  return text;
}

template <typename T>
std::string format_value(const T& value) {
  if constexpr (std::is_same_v<T, std::string>) {
    return value;
  } else if constexpr (std::is_same_v<T, bool>) {
    return value ? "true" : "false";
  } else {
    char buffer[64];
    auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, ptr);
  }
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `access` maps a config to the field it names.
template <typename Access>
Field field(std::string key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  return Field{
      key,
      [key, access](RunConfig& c, const std::string& v) { access(c) = parse_value<T>(key, v); },
      [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); },
  };
}

#define EVSSL_FIELD(key, member) field(key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      EVSSL_FIELD("lr", train.lr),
      EVSSL_FIELD("beta1", train.beta1),
      EVSSL_FIELD("beta2", train.beta2),
      EVSSL_FIELD("adam_epsilon", train.adam_epsilon),
      EVSSL_FIELD("epochs", train.epochs),
      EVSSL_FIELD("unroll", train.unroll),
      EVSSL_FIELD("temporal_start", train.temporal_start),
      EVSSL_FIELD("lambda_smooth", train.weights.lambda_smooth),
      EVSSL_FIELD("lambda_temporal", train.weights.lambda_temporal),
      EVSSL_FIELD("lambda_tv", train.weights.lambda_tv),
      EVSSL_FIELD("c_pos", train.weights.c_pos),
      EVSSL_FIELD("c_neg", train.weights.c_neg),
      EVSSL_FIELD("deblur", train.weights.deblur),
      EVSSL_FIELD("bins", train.bins),
      EVSSL_FIELD("events_per_pixel", train.events_per_pixel),
      EVSSL_FIELD("flow_scale", train.flow_scale),
      EVSSL_FIELD("seed", train.seed),
      EVSSL_FIELD("h_flip_prob", train.augmentation.h_flip_prob),
      EVSSL_FIELD("v_flip_prob", train.augmentation.v_flip_prob),
      EVSSL_FIELD("polarity_flip_prob", train.augmentation.polarity_flip_prob),
      EVSSL_FIELD("pause_prob", train.augmentation.pause_prob),
      EVSSL_FIELD("clip_gradients", train.clip_gradients),
      EVSSL_FIELD("clip_norm", train.clip_norm),
      EVSSL_FIELD("events", events),
      EVSSL_FIELD("output_dir", output_dir),
      EVSSL_FIELD("checkpoint", checkpoint),
      EVSSL_FIELD("flow_checkpoint", flow_checkpoint),
      EVSSL_FIELD("gt_flow_dir", gt_flow_dir),
      EVSSL_FIELD("gt_frames_dir", gt_frames_dir),
      EVSSL_FIELD("predictions_dir", predictions_dir),
      EVSSL_FIELD("width", width),
      EVSSL_FIELD("height", height),
      EVSSL_FIELD("sequence_length", sequence_length),
      EVSSL_FIELD("pattern", pattern),
      EVSSL_FIELD("period", period),
      EVSSL_FIELD("amplitude", amplitude),
      EVSSL_FIELD("blob_count", blob_count),
      EVSSL_FIELD("blob_sigma", blob_sigma),
      EVSSL_FIELD("pattern_image", pattern_image),
      EVSSL_FIELD("vx", vx),
      EVSSL_FIELD("vy", vy),
      EVSSL_FIELD("contrast", contrast),
      EVSSL_FIELD("duration", duration),
      EVSSL_FIELD("timestep", timestep),
      EVSSL_FIELD("flow_source", flow_source),
      EVSSL_FIELD("color", color),
  };
  return table;
}

#undef EVSSL_FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  train.validate();
  const auto& a = train.augmentation;
  for (double p : {a.h_flip_prob, a.v_flip_prob, a.polarity_flip_prob, a.pause_prob}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  evssl::validate(SensorGeometry{width, height});
  if (pattern != "checkerboard" && pattern != "blobs" && pattern != "image") {
    throw ConfigError("pattern must be checkerboard, blobs or image, got '" + pattern + "'");
  }
  if (!(contrast > 0.0)) throw ConfigError("contrast must be positive");
  if (!(duration >= 0.0)) throw ConfigError("duration must be non-negative");
  if (timestep < 0.0) throw ConfigError("timestep must be non-negative");
  if (flow_source != "gt" && flow_source != "joint" && flow_source != "checkpoint") {
    throw ConfigError("flow_source must be gt, joint or checkpoint, got '" + flow_source + "'");
  }
}

std::string RunConfig::to_text() const {
  std::string text;
  for (const Field& f : fields()) text += f.key + " = " + f.get(*this) + "\n";
  return text;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
  }();
  return names;
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    try {
      base.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not key=value");
  return {trim(std::string_view(text).substr(0, eq)), trim(std::string_view(text).substr(eq + 1))};
}

}  // namespace evssl
