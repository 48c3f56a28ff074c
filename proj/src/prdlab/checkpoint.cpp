#include "prdlab/checkpoint.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "prdlab/error.hpp"

namespace prdlab {

namespace {

using nlohmann::json;

constexpr const char* kEncoderFormat = "prdlab.encoders";
constexpr const char* kTrainingFormat = "prdlab.training";

void flatten_into(const json& value, const std::string& prefix, json& out) {
  if (value.is_object()) {
    for (auto it = value.begin(); it != value.end(); ++it) {
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    }
  } else {
    out[prefix] = value;
  }
}

template <typename T>
T get_as(const json& value, const std::string& key) {
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (value.is_number_integer() && value.get<std::int64_t>() < 0) {
        throw InvalidArgument("config key '" + key + "' must be non-negative");
      }
      if (!value.is_number_integer()) throw InvalidArgument("config key '" + key + "' must be an integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) throw InvalidArgument("config key '" + key + "' must be true or false");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) throw InvalidArgument("config key '" + key + "' must be a number");
    }
    return value.get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(TrainConfig&, const json&, const std::string&)>;

template <typename T, typename Owner>
Setter field(T Owner::*member, Owner TrainConfig::*owner) {
  return [member, owner](TrainConfig& c, const json& v, const std::string& key) {
    (c.*owner).*member = get_as<T>(v, key);
  };
}

template <typename T>
Setter field(T TrainConfig::*member) {
  return [member](TrainConfig& c, const json& v, const std::string& key) { c.*member = get_as<T>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto enc = &TrainConfig::encoder;
    auto loss = &TrainConfig::weights;
    t["encoder.embed_dim"] = field(&EncoderConfig::embed_dim, enc);
    t["encoder.regions"] = field(&EncoderConfig::regions, enc);
    t["encoder.subword_dim"] = field(&EncoderConfig::subword_dim, enc);
    t["encoder.image_side"] = field(&EncoderConfig::image_side, enc);
    t["encoder.image_channels"] = field(&EncoderConfig::image_channels, enc);
    t["encoder.conv_kernel"] = field(&EncoderConfig::conv_kernel, enc);
    t["encoder.ffn_dim"] = field(&EncoderConfig::ffn_dim, enc);
    t["encoder.position_signal"] = field(&EncoderConfig::position_signal, enc);
    t["encoder.init_seed"] = field(&EncoderConfig::init_seed, enc);
    t["encoder.local_layer"] = [](TrainConfig& c, const json& v, const std::string& key) {
      if (!v.is_number_integer()) throw InvalidArgument("config key '" + key + "' must be an integer");
      c.encoder.local_layer = v.get<int>();
    };
    t["encoder.conv_channels"] = [](TrainConfig& c, const json& v, const std::string& key) {
      if (!v.is_array()) throw InvalidArgument("config key '" + key + "' must be an array of integers");
      std::vector<std::size_t> channels;
      for (const auto& x : v) channels.push_back(get_as<std::size_t>(x, key));
      c.encoder.conv_channels = std::move(channels);
    };
    t["loss.alpha"] = field(&LossWeights::alpha, loss);
    t["loss.beta"] = field(&LossWeights::beta, loss);
    t["loss.tau"] = field(&LossWeights::tau, loss);
    t["loss.tau_local"] = field(&LossWeights::tau_local, loss);
    t["loss.tau_local_contrast"] = [](TrainConfig& c, const json& v, const std::string& key) {
      if (v.is_null()) {
        c.weights.tau_local_contrast.reset();
      } else {
        c.weights.tau_local_contrast = get_as<double>(v, key);
      }
    };
    t["train.epochs"] = field(&TrainConfig::epochs);
    t["train.batch_size"] = field(&TrainConfig::batch_size);
    t["train.lr"] = field(&TrainConfig::lr);
    t["train.momentum"] = field(&TrainConfig::momentum);
    t["train.weight_decay"] = field(&TrainConfig::weight_decay);
    t["train.data_seed"] = field(&TrainConfig::data_seed);
    t["train.perturb_seed"] = field(&TrainConfig::perturb_seed);
    t["train.checkpoint_every"] = field(&TrainConfig::checkpoint_every);
    t["train.detach_negatives"] = field(&TrainConfig::detach_negatives);
    t["train.compute_disabled_terms"] = field(&TrainConfig::compute_disabled_terms);
    return t;
  }();
  return table;
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"encoder.embed_dim", e.embed_dim},         {"encoder.regions", e.regions},
          {"encoder.subword_dim", e.subword_dim},     {"encoder.image_side", e.image_side},
          {"encoder.image_channels", e.image_channels}, {"encoder.conv_channels", e.conv_channels},
          {"encoder.conv_kernel", e.conv_kernel},     {"encoder.local_layer", e.local_layer},
          {"encoder.ffn_dim", e.ffn_dim},             {"encoder.position_signal", e.position_signal},
          {"encoder.init_seed", e.init_seed}};
}

json tensors_to_json(const std::vector<NamedTensor>& tensors) {
  json out = json::array();
  for (const auto& t : tensors) {
    out.push_back({{"name", t.name},
                   {"shape", t.value.shape()},
                   {"values", std::vector<double>(t.value.data().begin(), t.value.data().end())}});
  }
  return out;
}

void load_tensors(const json& list, std::vector<NamedTensor>& into) {
  std::map<std::string, const json*> by_name;
  for (const auto& entry : list) by_name[entry.at("name").get<std::string>()] = &entry;
  if (by_name.size() != into.size()) {
    throw InvalidArgument("checkpoint holds " + std::to_string(by_name.size()) + " parameters, model has " +
                          std::to_string(into.size()));
  }
  for (auto& p : into) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw InvalidArgument("checkpoint lacks parameter '" + p.name + "'");
    const auto shape = it->second->at("shape").get<Shape>();
    const auto values = it->second->at("values").get<std::vector<double>>();
    if (shape != p.value.shape() || values.size() != p.value.numel()) {
      throw InvalidArgument("checkpoint parameter '" + p.name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p.value.shape()));
    }
    p.value.assign(values);
  }
}

void check_format(const json& j, std::initializer_list<const char*> accepted) {
  if (!j.is_object() || !j.contains("format")) throw InvalidArgument("not a prdlab checkpoint");
  const auto format = j.at("format").get<std::string>();
  bool ok = false;
  for (const char* a : accepted) ok = ok || format == a;
  if (!ok) throw InvalidArgument("unexpected checkpoint format '" + format + "'");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw InvalidArgument("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
}

}  // namespace

json flatten_config(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  json out = json::object();
  flatten_into(j, "", out);
  return out;
}

json config_to_json(const TrainConfig& c) {
  json j = encoder_to_json(c.encoder);
  j["loss.alpha"] = c.weights.alpha;
  j["loss.beta"] = c.weights.beta;
  j["loss.tau"] = c.weights.tau;
  j["loss.tau_local"] = c.weights.tau_local;
  j["loss.tau_local_contrast"] = c.weights.tau_local_contrast ? json(*c.weights.tau_local_contrast) : json();
  j["train.epochs"] = c.epochs;
  j["train.batch_size"] = c.batch_size;
  j["train.lr"] = c.lr;
  j["train.momentum"] = c.momentum;
  j["train.weight_decay"] = c.weight_decay;
  j["train.data_seed"] = c.data_seed;
  j["train.perturb_seed"] = c.perturb_seed;
  j["train.checkpoint_every"] = c.checkpoint_every;
  j["train.detach_negatives"] = c.detach_negatives;
  j["train.compute_disabled_terms"] = c.compute_disabled_terms;
  return j;
}

void apply_config(TrainConfig& config, const json& j, const std::set<std::string>& passthrough_prefixes) {
  const json flat = flatten_config(j);
  TrainConfig updated = config;
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const auto setter = setters().find(it.key());
    if (setter != setters().end()) {
      setter->second(updated, it.value(), it.key());
      continue;
    }
    bool passthrough = false;
    for (const auto& prefix : passthrough_prefixes) passthrough = passthrough || it.key().rfind(prefix, 0) == 0;
    if (!passthrough) throw InvalidArgument("unknown config key '" + it.key() + "'");
  }
  config = std::move(updated);
}

json metrics_to_json(const MetricsRow& row) {
  return {{"epoch", row.epoch}, {"step", row.step}, {"global", row.global},
          {"local", row.local}, {"pert", row.pert}, {"total", row.total}};
}

json model_to_json(const Model& model) {
  return {{"format", kEncoderFormat},
          {"version", kCheckpointVersion},
          {"config", encoder_to_json(model.config())},
          {"parameters", tensors_to_json(model.parameters())}};
}

Model model_from_json(const json& j) {
  check_format(j, {kEncoderFormat, kTrainingFormat});
  try {
    TrainConfig config;
    apply_config(config, j.at("config"), {"loss.", "train.", "data.", "eval.", "run."});
    Model model(config.encoder);
    load_tensors(j.at("parameters"), model.parameters());
    return model;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed checkpoint: ") + e.what());
  }
}

json state_to_json(const TrainingState& s) {
  return {{"format", kTrainingFormat},
          {"version", kCheckpointVersion},
          {"config", config_to_json(s.config)},
          {"epochs_done", s.epochs_done},
          {"steps_done", s.steps_done},
          {"parameters", tensors_to_json(s.parameters)},
          {"momentum", s.momentum}};
}

TrainingState state_from_json(const json& j) {
  check_format(j, {kTrainingFormat});
  try {
    TrainingState s;
    apply_config(s.config, j.at("config"));
    s.epochs_done = j.at("epochs_done").get<std::size_t>();
    s.steps_done = j.at("steps_done").get<std::size_t>();
    Model layout(s.config.encoder);
    load_tensors(j.at("parameters"), layout.parameters());
    s.parameters = std::move(layout.parameters());
    s.momentum = j.at("momentum").get<std::vector<std::vector<double>>>();
    return s;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw RuntimeError("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model) { write_json(path, model_to_json(model)); }
Model load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }
void save_state(const std::filesystem::path& path, const TrainingState& state) {
  write_json(path, state_to_json(state));
}
TrainingState load_state(const std::filesystem::path& path) { return state_from_json(read_json(path)); }

}  // namespace prdlab
