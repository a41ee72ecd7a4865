#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmpred/error.hpp"
#include "mmpred/preprocess.hpp"

namespace mmpred::prep {

namespace {
using nlohmann::json;
}

std::string schema_json(const Vocabularies& vocab) {
  json j;
  j["static_features"] = vocab.static_features;
  j["lab_channels"] = vocab.lab_channels;
  j["med_groups"] = vocab.med_groups;
  j["tokenizer_vocab"] = vocab.tokenizer.to_vocab_list();
  j["window_start_year"] = vocab.window_start_year;
  j["max_tokens"] = vocab.max_tokens;
  j["months"] = kInputMonths;
  return j.dump();
}

uint64_t schema_hash(const Vocabularies& vocab) {
  // FNV-1a over the canonical schema JSON.
  const std::string s = schema_json(vocab);
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void save_dataset(const EncodedDataset& ds, const std::string& path) {
  json j;
  j["schema"] = json::parse(schema_json(ds.vocab));
  json samples = json::array();
  for (const auto& s : ds.samples) {
    json e;
    e["patient_id"] = s.patient_id;
    e["label"] = s.label;
    e["static"] = s.static_values;
    e["labs"] = s.labs;
    e["meds"] = s.meds;
    e["note_tokens"] = s.note_tokens;
    e["note_months"] = s.note_months;
    samples.push_back(std::move(e));
  }
  j["samples"] = std::move(samples);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write dataset file " + path);
  os << j.dump();
}

EncodedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pipeline_error("cannot read dataset file " + path);
  json j;
  is >> j;
  EncodedDataset ds;
  const json& schema = j.at("schema");
  ds.vocab.static_features = schema.at("static_features").get<std::vector<std::string>>();
  ds.vocab.lab_channels = schema.at("lab_channels").get<std::vector<std::string>>();
  ds.vocab.med_groups = schema.at("med_groups").get<std::vector<std::string>>();
  ds.vocab.tokenizer = WordPieceTokenizer::from_vocab_list(
      schema.at("tokenizer_vocab").get<std::vector<std::string>>());
  ds.vocab.window_start_year = schema.at("window_start_year").get<int>();
  ds.vocab.max_tokens = schema.at("max_tokens").get<int>();
  for (const auto& e : j.at("samples")) {
    MultimodalSample s;
    s.patient_id = e.at("patient_id").get<std::string>();
    s.label = e.at("label").get<int>();
    s.static_values = e.at("static").get<std::vector<double>>();
    s.labs = e.at("labs").get<std::vector<double>>();
    s.meds = e.at("meds").get<std::vector<double>>();
    s.note_tokens = e.at("note_tokens").get<std::vector<std::vector<int>>>();
    s.note_months = e.at("note_months").get<std::vector<int>>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace mmpred::prep
