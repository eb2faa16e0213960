#include "anyreid/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "anyreid/error.hpp"

namespace anyreid {
namespace {

namespace pt = boost::property_tree;

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* kind) {
  throw ConfigError("config key '" + key + "': expected " + kind + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* kind) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, kind);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

Setter set_int(std::function<int&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    field(c) = parse_number<int>(k, v, "an integer");
  };
}

Setter set_double(std::function<double&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    field(c) = parse_number<double>(k, v, "a number");
  };
}

Setter set_bool(std::function<bool&(RunConfig&)> field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    field(c) = parse_bool(k, v);
  };
}

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"encoder",
       {
           {"dim", set_int([](RunConfig& c) -> int& { return c.encoder.dim; })},
           {"depth", set_int([](RunConfig& c) -> int& { return c.encoder.depth; })},
           {"heads", set_int([](RunConfig& c) -> int& { return c.encoder.heads; })},
           {"decoupled", set_bool([](RunConfig& c) -> bool& { return c.encoder.decoupled; })},
           {"identity_attention",
            set_bool([](RunConfig& c) -> bool& { return c.encoder.identity_attention; })},
           {"weight_std", set_double([](RunConfig& c) -> double& { return c.encoder.weight_std; })},
           {"token_std", set_double([](RunConfig& c) -> double& { return c.encoder.token_std; })},
       }},
      {"loss",
       {
           {"w1", set_double([](RunConfig& c) -> double& { return c.train.loss.w1; })},
           {"w2", set_double([](RunConfig& c) -> double& { return c.train.loss.w2; })},
           {"margin", set_double([](RunConfig& c) -> double& { return c.train.loss.margin; })},
           {"ce_epsilon",
            set_double([](RunConfig& c) -> double& { return c.train.loss.ce_epsilon; })},
       }},
      {"optim",
       {
           {"lr", set_double([](RunConfig& c) -> double& { return c.train.adam.lr; })},
           {"epochs", set_int([](RunConfig& c) -> int& { return c.train.epochs; })},
           {"P", set_int([](RunConfig& c) -> int& { return c.train.identities_per_batch; })},
           {"K", set_int([](RunConfig& c) -> int& { return c.train.instances_per_identity; })},
       }},
      {"data",
       {
           {"num_identities", set_int([](RunConfig& c) -> int& { return c.data.num_identities; })},
           {"samples_per_identity",
            set_int([](RunConfig& c) -> int& { return c.data.samples_per_identity; })},
           {"latent_dim", set_int([](RunConfig& c) -> int& { return c.data.latent_dim; })},
           {"shared_strength",
            set_double([](RunConfig& c) -> double& { return c.data.shared_strength; })},
           {"noise_std", set_double([](RunConfig& c) -> double& { return c.data.noise_std; })},
           {"content_overlap",
            set_double([](RunConfig& c) -> double& { return c.data.content_overlap; })},
           {"num_cameras", set_int([](RunConfig& c) -> int& { return c.data.num_cameras; })},
           {"test_fraction",
            set_double([](RunConfig& c) -> double& { return c.data.test_fraction; })},
           {"num_patches", set_int([](RunConfig& c) -> int& { return c.data.num_patches; })},
           {"patch_dim", set_int([](RunConfig& c) -> int& { return c.data.patch_dim; })},
       }},
      {"eval",
       {
           {"scenarios",
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.eval.scenarios = parse_scenario_list(v);
            }},
           {"exclude_same_camera",
            set_bool([](RunConfig& c) -> bool& { return c.eval.exclude_same_camera; })},
       }},
      {"run",
       {
           {"seed",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.seed = parse_number<std::uint64_t>(k, v, "a non-negative integer");
            }},
           {"out_dir",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v.empty()) bad_value(k, v, "a path");
              c.out_dir = v;
            }},
       }},
  };
  return table;
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::sync() {
  data.seed = seed;
  train.seed = seed;
  encoder.num_patches = data.num_patches;
  encoder.patch_dim = data.patch_dim;
}

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  data.validate();
  if (encoder.num_patches != data.num_patches || encoder.patch_dim != data.patch_dim)
    throw ConfigError("encoder grid shape does not match the data");
  if (eval.scenarios.empty()) throw ConfigError("scenario list is empty");
}

RunConfig parse_run_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  RunConfig cfg;
  const auto& table = schema();
  for (const auto& [section, body] : tree) {
    const auto sec = table.find(section);
    if (sec == table.end())
      throw ConfigError("unknown config section or key '" + section + "'");
    for (const auto& [key, value] : body) {
      const auto field = sec->second.find(key);
      if (field == sec->second.end())
        throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
      field->second(cfg, section + "." + key, value.get_value<std::string>());
    }
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_run_config(in);
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream o;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[encoder]\n"
    << "dim = " << c.encoder.dim << "\n"
    << "depth = " << c.encoder.depth << "\n"
    << "heads = " << c.encoder.heads << "\n"
    << "decoupled = " << b(c.encoder.decoupled) << "\n"
    << "identity_attention = " << b(c.encoder.identity_attention) << "\n"
    << "weight_std = " << number(c.encoder.weight_std) << "\n"
    << "token_std = " << number(c.encoder.token_std) << "\n\n";
  o << "[loss]\n"
    << "w1 = " << number(c.train.loss.w1) << "\n"
    << "w2 = " << number(c.train.loss.w2) << "\n"
    << "margin = " << number(c.train.loss.margin) << "\n"
    << "ce_epsilon = " << number(c.train.loss.ce_epsilon) << "\n\n";
  o << "[optim]\n"
    << "lr = " << number(c.train.adam.lr) << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "P = " << c.train.identities_per_batch << "\n"
    << "K = " << c.train.instances_per_identity << "\n\n";
  o << "[data]\n"
    << "num_identities = " << c.data.num_identities << "\n"
    << "samples_per_identity = " << c.data.samples_per_identity << "\n"
    << "latent_dim = " << c.data.latent_dim << "\n"
    << "shared_strength = " << number(c.data.shared_strength) << "\n"
    << "noise_std = " << number(c.data.noise_std) << "\n"
    << "content_overlap = " << number(c.data.content_overlap) << "\n"
    << "num_cameras = " << c.data.num_cameras << "\n"
    << "test_fraction = " << number(c.data.test_fraction) << "\n"
    << "num_patches = " << c.data.num_patches << "\n"
    << "patch_dim = " << c.data.patch_dim << "\n\n";
  o << "[eval]\nscenarios = ";
  for (std::size_t i = 0; i < c.eval.scenarios.size(); ++i)
    o << (i ? "," : "") << c.eval.scenarios[i].name();
  o << "\nexclude_same_camera = " << b(c.eval.exclude_same_camera) << "\n\n";
  o << "[run]\nseed = " << c.seed << "\nout_dir = " << c.out_dir << "\n";
  return o.str();
}

}  // namespace anyreid
