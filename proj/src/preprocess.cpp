#include "mmpred/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>

#include "mmpred/error.hpp"

namespace mmpred::prep {

namespace {

bool is_upper_alpha(char c) { return c >= 'A' && c <= 'Z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string med_group_of(const std::string& code) {
  // ATC level 3 = pharmacological subgroup = 4-character prefix.
  return code.size() >= 4 ? code.substr(0, 4) : code;
}

const std::regex& censor_regex() {
  static const std::regex re("(\\s[tnmTNM]\\d|metastas)");
  return re;
}

}  // namespace

std::string aggregate_icd10(const std::string& code) {
  if (code.size() < 3 || !is_upper_alpha(code[0]) || !is_digit(code[1]) || !is_digit(code[2])) {
    throw encode_error("malformed ICD-10 code '" + code + "'");
  }
  const char chapter = code[0];
  const int numeric = (code[1] - '0') * 10 + (code[2] - '0');
  const bool neoplasm = chapter == 'C' || (chapter == 'D' && numeric <= 48);
  return neoplasm ? code : code.substr(0, 3);
}

AgeGroup encode_age(int birth_year, int window_start_year) {
  if (window_start_year < birth_year) {
    throw encode_error("window_start_year " + std::to_string(window_start_year) +
                       " precedes birth_year " + std::to_string(birth_year));
  }
  const int age = window_start_year - birth_year;
  if (age < 25) return AgeGroup::youth;
  if (age <= 64) return AgeGroup::adult;
  return AgeGroup::senior;
}

const char* age_group_name(AgeGroup g) {
  switch (g) {
    case AgeGroup::youth: return "youth";
    case AgeGroup::adult: return "adult";
    default: return "senior";
  }
}

std::string censor_text(const std::string& text) {
  // Sentences end at terminal punctuation; the whitespace that follows stays
  // with the next sentence so the regex's \s context is preserved.
  std::vector<std::string> sentences;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
      sentences.push_back(text.substr(start, i - start + 1));
      start = i + 1;
    }
  }
  if (start < text.size()) sentences.push_back(text.substr(start));

  std::string out;
  for (const auto& sentence : sentences) {
    if (std::regex_search(sentence, censor_regex())) continue;
    out += sentence;
  }
  // Drop whitespace orphaned by a removed leading sentence.
  const size_t first = out.find_first_not_of(" \t\n\r");
  return first == std::string::npos ? std::string() : out.substr(first);
}

int Vocabularies::feature_index(const std::string& name) const {
  auto it = std::lower_bound(static_features.begin(), static_features.end(), name);
  if (it == static_features.end() || *it != name) return -1;
  return static_cast<int>(it - static_features.begin());
}

Vocabularies build_vocabularies(const std::vector<synthgen::RawPatient>& dev_patients,
                                const BuildOptions& options) {
  if (dev_patients.empty()) throw config_error("build_vocabularies: empty development set");
  Vocabularies v;
  v.window_start_year = options.window_start_year;
  v.max_tokens = options.max_tokens;

  std::set<std::string> dx_codes, lab_channels, med_groups;
  std::vector<std::string> corpus;
  for (const auto& p : dev_patients) {
    for (const auto& e : p.diagnosis_events) {
      if (e.month > kInputMonths) continue;  // month 7 never enters any vocabulary
      dx_codes.insert(aggregate_icd10(e.code));
    }
    for (const auto& e : p.lab_events) {
      if (e.month > kInputMonths) continue;
      lab_channels.insert(e.channel);
    }
    for (const auto& e : p.med_events) {
      if (e.month > kInputMonths) continue;
      med_groups.insert(med_group_of(e.code));
    }
    for (const auto& n : p.notes) {
      if (n.month > kInputMonths) continue;
      corpus.push_back(n.text);
    }
  }

  v.static_features.push_back("age:youth");
  v.static_features.push_back("age:adult");
  v.static_features.push_back("age:senior");
  v.static_features.push_back("gender:female");
  v.static_features.push_back("gender:male");
  v.static_features.push_back("gender:other");
  for (const auto& c : dx_codes) v.static_features.push_back("dx:" + c);
  v.static_features.push_back("dx:unknown");
  std::sort(v.static_features.begin(), v.static_features.end());

  v.lab_channels.assign(lab_channels.begin(), lab_channels.end());
  std::sort(v.lab_channels.begin(), v.lab_channels.end());

  v.med_groups.assign(med_groups.begin(), med_groups.end());
  v.med_groups.push_back("unknown");
  std::sort(v.med_groups.begin(), v.med_groups.end());

  if (corpus.empty()) throw config_error("build_vocabularies: development set has no notes");
  v.tokenizer = WordPieceTokenizer::train(corpus, options.tokenizer_vocab_size);
  return v;
}

MultimodalSample encode_patient(const synthgen::RawPatient& p, const Vocabularies& vocab,
                                const EncodeOptions& options) {
  MultimodalSample s;
  s.patient_id = p.patient_id;
  s.label = p.label;

  // Static: one-hot gender + age group + aggregated in-window diagnoses.
  s.static_values.assign(vocab.static_features.size(), 0.0);
  auto set_feature = [&](const std::string& name) {
    int idx = vocab.feature_index(name);
    if (idx < 0) idx = vocab.feature_index("dx:unknown");
    if (idx >= 0) s.static_values[idx] = 1.0;
  };
  set_feature(std::string("gender:") + synthgen::gender_name(p.gender));
  set_feature(std::string("age:") +
              age_group_name(encode_age(p.birth_year, vocab.window_start_year)));
  for (const auto& e : p.diagnosis_events) {
    if (e.month > kInputMonths) continue;
    set_feature("dx:" + aggregate_icd10(e.code));
  }

  // Labs: monthly arithmetic means, -1 where a channel went unmeasured.
  const int C = vocab.n_lab_channels();
  std::vector<double> sums(static_cast<size_t>(C) * kInputMonths, 0.0);
  std::vector<int> counts(static_cast<size_t>(C) * kInputMonths, 0);
  for (const auto& e : p.lab_events) {
    if (e.month > kInputMonths) continue;
    const auto it = std::lower_bound(vocab.lab_channels.begin(), vocab.lab_channels.end(),
                                     e.channel);
    if (it == vocab.lab_channels.end() || *it != e.channel) continue;  // unseen in dev: dropped
    const size_t idx = static_cast<size_t>(it - vocab.lab_channels.begin()) * kInputMonths +
                       (e.month - 1);
    sums[idx] += e.value;
    counts[idx] += 1;
  }
  s.labs.assign(sums.size(), kLabMissing);
  for (size_t i = 0; i < sums.size(); ++i) {
    if (counts[i] > 0) s.labs[i] = sums[i] / counts[i];
  }

  // Meds: monthly event counts per pharmacological subgroup.
  const int G = vocab.n_med_groups();
  s.meds.assign(static_cast<size_t>(G) * kInputMonths, 0.0);
  for (const auto& e : p.med_events) {
    if (e.month > kInputMonths) continue;
    std::string group = med_group_of(e.code);
    auto it = std::lower_bound(vocab.med_groups.begin(), vocab.med_groups.end(), group);
    if (it == vocab.med_groups.end() || *it != group) {
      it = std::lower_bound(vocab.med_groups.begin(), vocab.med_groups.end(),
                            std::string("unknown"));
    }
    const size_t idx = static_cast<size_t>(it - vocab.med_groups.begin()) * kInputMonths +
                       (e.month - 1);
    s.meds[idx] += 1.0;
  }

  // Text: the 20 most recent in-window notes, chronological order preserved.
  std::vector<synthgen::NoteEvent> notes;
  for (const auto& n : p.notes) {
    if (n.month <= kInputMonths) notes.push_back(n);
  }
  std::sort(notes.begin(), notes.end(), [](const auto& a, const auto& b) {
    return a.month != b.month ? a.month < b.month : a.order < b.order;
  });
  if (static_cast<int>(notes.size()) > kMaxNotes) {
    notes.erase(notes.begin(), notes.end() - kMaxNotes);
  }
  for (const auto& n : notes) {
    const std::string text = options.censor_notes ? censor_text(n.text) : n.text;
    s.note_tokens.push_back(vocab.tokenizer.tokenize(text));
    s.note_months.push_back(n.month);
  }
  return s;
}

EncodedDataset encode_cohort(const std::vector<synthgen::RawPatient>& patients,
                             const Vocabularies& vocab, const EncodeOptions& options) {
  EncodedDataset ds;
  ds.vocab = vocab;
  ds.samples.reserve(patients.size());
  for (const auto& p : patients) ds.samples.push_back(encode_patient(p, vocab, options));
  return ds;
}

std::vector<int> EncodedDataset::labels() const {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

std::vector<int> flatten_notes(const MultimodalSample& s, int max_tokens) {
  std::vector<int> stream;
  for (size_t i = 0; i < s.note_tokens.size(); ++i) {
    if (i) stream.push_back(WordPieceTokenizer::kSep);
    stream.insert(stream.end(), s.note_tokens[i].begin(), s.note_tokens[i].end());
  }
  if (max_tokens > 0 && static_cast<int>(stream.size()) > max_tokens) {
    stream.erase(stream.begin(), stream.end() - max_tokens);  // keep the most recent
  }
  return stream;
}

}  // namespace mmpred::prep
