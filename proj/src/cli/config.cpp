#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "ebr/cli.hpp"
#include "ebr/error.hpp"

namespace ebr::cli {

using nlohmann::json;

json default_config() {
  return {
      {"seed", 1},
      {"task", "cipher"},
      {"data",
       {{"source", "synthetic"},
        {"train_size", 2000},
        {"valid_size", 200},
        {"test_size", 200},
        {"vocab_size", 30},
        {"min_len", 6},
        {"max_len", 12},
        {"structure_seed", 20201},
        {"train_src", ""},
        {"train_ref", ""},
        {"valid_src", ""},
        {"valid_ref", ""},
        {"test_src", ""},
        {"test_ref", ""},
        {"language_pair", "src-tgt"},
        {"bpe_merges", 0}}},
      {"base",
       {{"kind", "channel"},
        {"p_copy", 0.45},
        {"p_substitute", 0.45},
        {"p_insert", 0.05},
        {"p_delete", 0.05},
        {"substitution_set", 1},
        {"confusion_seed", 7},
        {"embed_dim", 32},
        {"hidden_dim", 64},
        {"attn_dim", 32},
        {"epochs", 20},
        {"batch_size", 16},
        {"lr", 0.005},
        {"patience", 3},
        {"clip_norm", 5.0}}},
      {"lm",
       {{"order", 3},
        {"smoothing_k", 1.0},
        {"masked", "ngram"},
        {"predictor_epochs", 2},
        {"predictor_window", 2}}},
      {"energy",
       {{"embed_dim", 64},
        {"hidden_dim", 256},
        {"pooling", "conv"},
        {"freeze_embeddings", false},
        {"l2", 0.0},
        {"method", "rank"}}},
      {"train",
       {{"alpha", 10.0},
        {"T", 1000.0},
        {"k", 100},
        {"gamma", 0.0},
        {"lr", 0.01},
        {"batch_size", 16},
        {"epochs", 1},
        {"steps_per_epoch", 0},
        {"sample_temp", 1.0},
        {"cache_candidates", false},
        {"noise_ratio", 1},
        {"residual", true}}},
      {"eval",
       {{"strategy", "ebr"},
        {"k", 100},
        {"temp", 1.0},
        {"beam_width", 5},
        {"lambda", 0.01},
        {"length_normalize", false},
        {"split", "test"}}},
      {"analysis",
       {{"split", "test"}, {"k", 100}, {"length_bins", {5, 10}}, {"window", 3}}},
      {"sweep", {{"gamma", {0.0, 0.25, 0.75, 1.0}}}},
  };
}

namespace {

std::string type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  return "a table";
}

json coerce(const json& schema, const json& value, const std::string& key) {
  auto fail = [&] { throw InvalidConfig("config: " + key + " must be " + type_name(schema)); };
  if (schema.is_boolean()) {
    if (!value.is_boolean()) fail();
    return value;
  }
  if (schema.is_number_unsigned() || schema.is_number_integer()) {
    if (!value.is_number_integer()) fail();
    if (value.get<long long>() < 0) throw InvalidConfig("config: " + key + " must be non-negative");
    return value;
  }
  if (schema.is_number()) {
    if (!value.is_number()) fail();
    return value.get<double>();
  }
  if (schema.is_string()) {
    if (!value.is_string()) fail();
    return value;
  }
  if (schema.is_array()) {
    if (!value.is_array()) fail();
    json out = json::array();
    for (const auto& item : value) out.push_back(coerce(schema.empty() ? item : schema.front(), item, key + "[]"));
    return out;
  }
  fail();
  return {};
}

// TOML values arrive as strings; recover their type from the schema.
json parse_scalar(const json& schema, const std::string& text, const std::string& key) {
  try {
    if (schema.is_boolean()) {
      if (text == "true") return true;
      if (text == "false") return false;
    } else if (schema.is_number_integer()) {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } else if (schema.is_number()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else if (schema.is_string()) {
      return text;
    }
  } catch (const std::exception&) {
  }
  throw InvalidConfig("config: cannot read " + key + " = " + text + " as " + type_name(schema));
}

json toml_to_json(std::istream& in) {
  const json schema = default_config();
  json out = json::object();
  CLI::ConfigTOML reader;
  std::vector<CLI::ConfigItem> items;
  try {
    items = reader.from_config(in);
  } catch (const CLI::Error& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    json path_schema = schema;
    json* target = &out;
    std::string key;
    for (const auto& p : item.parents) {
      key += p + ".";
      if (!path_schema.contains(p) || !path_schema[p].is_object()) throw InvalidConfig("config: unknown section " + key);
      path_schema = path_schema[p];
      target = &(*target)[p];
    }
    key += item.name;
    if (!path_schema.contains(item.name)) throw InvalidConfig("config: unknown key " + key);
    const json& s = path_schema[item.name];
    if (s.is_array()) {
      json arr = json::array();
      for (const auto& v : item.inputs) arr.push_back(parse_scalar(s.front(), v, key));
      (*target)[item.name] = arr;
    } else {
      if (item.inputs.size() != 1) throw InvalidConfig("config: " + key + " expects one value");
      (*target)[item.name] = parse_scalar(s, item.inputs.front(), key);
    }
  }
  return out;
}

void merge_into(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw InvalidConfig("config: " + (prefix.empty() ? "document" : prefix) + " must be a table");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw InvalidConfig("config: unknown key " + key);
    if (base[k].is_object()) {
      merge_into(base[k], v, key);
    } else {
      base[k] = coerce(base[k], v, key);
    }
  }
}

}  // namespace

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("config: cannot read " + path.string());
  if (path.extension() == ".json") {
    try {
      return json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidConfig(std::string("config: ") + e.what());
    }
  }
  return toml_to_json(in);
}

void merge_config(json& base, const json& overlay) { merge_into(base, overlay, ""); }

void validate_config(const json& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InvalidConfig(std::string("config: ") + name + " must be positive");
  };
  auto one_of = [](const std::string& v, std::initializer_list<const char*> options, const char* name) {
    for (const char* o : options)
      if (v == o) return;
    throw InvalidConfig(std::string("config: invalid ") + name + ": " + v);
  };
  one_of(c["task"].get<std::string>(), {"reverse", "cipher", "noisy-copy"}, "task");
  one_of(c["data"]["source"].get<std::string>(), {"synthetic", "files"}, "data.source");
  one_of(c["base"]["kind"].get<std::string>(), {"channel", "seq2seq"}, "base.kind");
  one_of(c["lm"]["masked"].get<std::string>(), {"ngram", "predictor"}, "lm.masked");
  one_of(c["energy"]["pooling"].get<std::string>(), {"conv", "mean"}, "energy.pooling");
  one_of(c["energy"]["method"].get<std::string>(), {"rank", "nce"}, "energy.method");
  one_of(c["eval"]["split"].get<std::string>(), {"valid", "test"}, "eval.split");
  one_of(c["eval"]["strategy"].get<std::string>(), {"beam", "sample", "lm", "mlm", "ebr", "nce-ebr", "oracle", "all"},
         "eval.strategy");
  one_of(c["analysis"]["split"].get<std::string>(), {"train", "valid", "test"}, "analysis.split");
  if (c["data"]["source"] == "files" && c["base"]["kind"] == "channel")
    throw InvalidConfig("config: the channel base model needs synthetic data");
  if (c["data"]["train_size"].get<long>() < 1) throw InvalidConfig("config: data.train_size must be >= 1");
  positive(c["train"]["alpha"].get<double>(), "train.alpha");
  positive(c["train"]["T"].get<double>(), "train.T");
  positive(c["train"]["sample_temp"].get<double>(), "train.sample_temp");
  positive(c["eval"]["temp"].get<double>(), "eval.temp");
  positive(c["lm"]["smoothing_k"].get<double>(), "lm.smoothing_k");
  if (c["train"]["k"].get<long>() < 2) throw InvalidConfig("config: train.k must be >= 2");
  if (c["eval"]["k"].get<long>() < 1) throw InvalidConfig("config: eval.k must be >= 1");
  if (c["analysis"]["k"].get<long>() < 3) throw InvalidConfig("config: analysis.k must be >= 3");
  const double g = c["train"]["gamma"].get<double>();
  if (g < 0.0 || g > 1.0) throw InvalidConfig("config: train.gamma must lie in [0, 1]");
  for (const auto& v : c["sweep"]["gamma"])
    if (v.get<double>() < 0.0 || v.get<double>() > 1.0) throw InvalidConfig("config: sweep.gamma must lie in [0, 1]");
  if (c["eval"]["lambda"].get<double>() < 0.0) throw InvalidConfig("config: eval.lambda must be non-negative");
  if (c["eval"]["beam_width"].get<long>() < 1) throw InvalidConfig("config: eval.beam_width must be >= 1");
  if (c["lm"]["order"].get<long>() < 1) throw InvalidConfig("config: lm.order must be >= 1");
  if (c["train"]["noise_ratio"].get<long>() < 1) throw InvalidConfig("config: train.noise_ratio must be >= 1");
}

}  // namespace ebr::cli
