#include <fstream>

#include "qrt/model.hpp"

namespace qrt::model {

using nlohmann::json;

void validate(const ArchConfig& a) {
  auto pos = [&](long v, const char* name) {
    require(v > 0, ErrorCode::validate, std::string("arch field '") + name + "' must be positive");
  };
  pos(a.encoder_layers, "encoder_layers");
  pos(a.encoder_input, "encoder_input");
  pos(a.encoder_hidden, "encoder_hidden");
  pos(a.joint_dim, "joint_dim");
  pos(a.pred_hidden, "pred_hidden");
  pos(a.embed_dim, "embed_dim");
  pos(a.lm_ext_hidden, "lm_ext_hidden");
  pos(a.lm_ext_layers, "lm_ext_layers");
  pos(a.lm_ext_bottleneck, "lm_ext_bottleneck");
  pos(a.lm_ext_embed, "lm_ext_embed");
  require(a.vocab == 46, ErrorCode::validate, "arch field 'vocab' must be 46 output characters");
}

namespace {

long get_long(const json& j, const char* key, long fallback) {
  if (!j.contains(key)) return fallback;
  require(j[key].is_number_integer(), ErrorCode::config,
          std::string("arch field '") + key + "' must be an integer");
  return j[key].get<long>();
}

}  // namespace

ArchConfig arch_from_json(const json& j) {
  require(j.is_object(), ErrorCode::config, "arch config must be a JSON object");
  ArchConfig a;
  static const char* known[] = {"encoder_layers", "encoder_input", "encoder_hidden",
                                "joint_dim",      "pred_hidden",   "embed_dim",
                                "vocab",          "lm_ext_hidden", "lm_ext_layers",
                                "lm_ext_bottleneck", "lm_ext_embed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    require(ok, ErrorCode::config, "unknown arch field '" + it.key() + "'");
  }
  a.encoder_layers = get_long(j, "encoder_layers", a.encoder_layers);
  a.encoder_input = get_long(j, "encoder_input", a.encoder_input);
  a.encoder_hidden = get_long(j, "encoder_hidden", a.encoder_hidden);
  a.joint_dim = get_long(j, "joint_dim", a.joint_dim);
  a.pred_hidden = get_long(j, "pred_hidden", a.pred_hidden);
  a.embed_dim = get_long(j, "embed_dim", a.embed_dim);
  a.vocab = get_long(j, "vocab", a.vocab);
  a.lm_ext_hidden = get_long(j, "lm_ext_hidden", a.lm_ext_hidden);
  a.lm_ext_layers = get_long(j, "lm_ext_layers", a.lm_ext_layers);
  a.lm_ext_bottleneck = get_long(j, "lm_ext_bottleneck", a.lm_ext_bottleneck);
  a.lm_ext_embed = get_long(j, "lm_ext_embed", a.lm_ext_embed);
  validate(a);
  return a;
}

json arch_to_json(const ArchConfig& a) {
  return json{{"encoder_layers", a.encoder_layers},
              {"encoder_input", a.encoder_input},
              {"encoder_hidden", a.encoder_hidden},
              {"joint_dim", a.joint_dim},
              {"pred_hidden", a.pred_hidden},
              {"embed_dim", a.embed_dim},
              {"vocab", a.vocab},
              {"lm_ext_hidden", a.lm_ext_hidden},
              {"lm_ext_layers", a.lm_ext_layers},
              {"lm_ext_bottleneck", a.lm_ext_bottleneck},
              {"lm_ext_embed", a.lm_ext_embed}};
}

ArchConfig load_arch(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open arch config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, "arch config '" + path + "' is not valid JSON: " + e.what());
  }
  return arch_from_json(j);
}

// --- quantizer spec json ----------------------------------------------------

namespace {

qcore::QuantizerSpec spec_from_json(const json& j, const std::string& where, bool weight_role) {
  require(j.is_object(), ErrorCode::config, where + ": quantizer spec must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    require(k == "kind" || k == "bits" || k == "symmetric" || k == "bounds" ||
                k == "learned_bounds",
            ErrorCode::config, where + ": unknown quantizer field '" + k + "'");
  }
  require(j.contains("kind") && j.contains("bits"), ErrorCode::config,
          where + ": quantizer spec needs 'kind' and 'bits'");
  qcore::QuantizerSpec s;
  s.kind = qcore::kind_from_name(j["kind"].get<std::string>());
  s.bits = j["bits"].get<int>();
  s.symmetric = j.value("symmetric", weight_role);
  if (j.contains("bounds")) {
    auto b = j["bounds"];
    require(b.is_array() && b.size() == 2, ErrorCode::config,
            where + ": 'bounds' must be [lower, upper]");
    s.fixed_bounds = {{b[0].get<double>(), b[1].get<double>()}};
  }
  if (j.contains("learned_bounds")) {
    auto b = j["learned_bounds"];
    require(b.is_array() && b.size() == 2, ErrorCode::config,
            where + ": 'learned_bounds' must be [lower, upper]");
    s.learned_bounds = {{b[0].get<double>(), b[1].get<double>()}};
  }
  qcore::validate_spec(s, weight_role);
  return s;
}

json spec_to_json(const qcore::QuantizerSpec& s) {
  json j{{"kind", qcore::kind_name(s.kind)}, {"bits", s.bits}, {"symmetric", s.symmetric}};
  if (s.fixed_bounds) j["bounds"] = {s.fixed_bounds->first, s.fixed_bounds->second};
  if (s.learned_bounds) j["learned_bounds"] = {s.learned_bounds->first, s.learned_bounds->second};
  return j;
}

}  // namespace

const LayerScheme* QuantSchemeConfig::find(const std::string& id) const {
  auto it = layers.find(id);
  return it == layers.end() ? nullptr : &it->second;
}

QuantSchemeConfig scheme_from_json(const json& j) {
  require(j.is_object(), ErrorCode::config, "scheme config must be a JSON object");
  QuantSchemeConfig s;
  s.name = j.value("name", std::string("unnamed"));
  s.quantize_biases = j.value("quantize_biases", false);
  if (j.contains("placement")) {
    std::string p = j["placement"].get<std::string>();
    require(p == "Inner" || p == "Outer", ErrorCode::config,
            "scheme placement must be 'Inner' or 'Outer'");
    s.placement = p == "Inner" ? qrnn::Placement::Inner : qrnn::Placement::Outer;
  }
  if (j.contains("sawb_mode")) {
    std::string m = j["sawb_mode"].get<std::string>();
    require(m == "oracle_grid" || m == "closed_form", ErrorCode::config,
            "sawb_mode must be 'oracle_grid' or 'closed_form'");
    s.sawb_mode = m == "oracle_grid" ? qcore::SawbMode::oracle_grid : qcore::SawbMode::closed_form;
  }
  if (j.contains("layers")) {
    require(j["layers"].is_object(), ErrorCode::config, "'layers' must be an object");
    for (auto it = j["layers"].begin(); it != j["layers"].end(); ++it) {
      const std::string& id = it.key();
      const json& entry = it.value();
      require(entry.is_object(), ErrorCode::config, "layer '" + id + "' entry must be an object");
      LayerScheme ls;
      for (auto f = entry.begin(); f != entry.end(); ++f) {
        const std::string& role = f.key();
        if (role == "weight") {
          ls.weight = spec_from_json(f.value(), id + ".weight", true);
        } else if (role == "input") {
          ls.input = spec_from_json(f.value(), id + ".input", false);
        } else if (role == "hidden") {
          ls.hidden = spec_from_json(f.value(), id + ".hidden", false);
        } else if (role == "bias") {
          fail(ErrorCode::validate, "layer '" + id + "': biases are never quantized");
        } else if (role == "cell") {
          fail(ErrorCode::validate, "layer '" + id + "': cell states are never quantized");
        } else {
          fail(ErrorCode::config, "layer '" + id + "': unknown role '" + role + "'");
        }
      }
      s.layers[id] = ls;
    }
  }
  validate_scheme(s);
  return s;
}

json scheme_to_json(const QuantSchemeConfig& s) {
  json layers = json::object();
  for (const auto& [id, ls] : s.layers) {
    json entry = json::object();
    if (ls.weight) entry["weight"] = spec_to_json(*ls.weight);
    if (ls.input) entry["input"] = spec_to_json(*ls.input);
    if (ls.hidden) entry["hidden"] = spec_to_json(*ls.hidden);
    layers[id] = entry;
  }
  return json{{"name", s.name},
              {"quantize_biases", s.quantize_biases},
              {"placement", s.placement == qrnn::Placement::Inner ? "Inner" : "Outer"},
              {"sawb_mode", s.sawb_mode == qcore::SawbMode::oracle_grid ? "oracle_grid" : "closed_form"},
              {"layers", layers}};
}

QuantSchemeConfig load_scheme(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open scheme config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, "scheme config '" + path + "' is not valid JSON: " + e.what());
  }
  return scheme_from_json(j);
}

void validate_scheme(const QuantSchemeConfig& s) {
  require(!s.quantize_biases, ErrorCode::validate, "biases are never quantized");
  for (const auto& [id, ls] : s.layers) {
    if (ls.weight) qcore::validate_spec(*ls.weight, true);
    if (ls.input) qcore::validate_spec(*ls.input, false);
    if (ls.hidden) qcore::validate_spec(*ls.hidden, false);
    require(ls.weight || ls.input || ls.hidden, ErrorCode::validate,
            "layer '" + id + "': empty scheme entry");
    require(ls.weight.has_value(), ErrorCode::validate,
            "layer '" + id + "': activation quantizers require a weight spec");
  }
}

}  // namespace qrt::model
