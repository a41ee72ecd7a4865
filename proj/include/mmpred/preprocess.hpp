#pragma once

#include <string>
#include <vector>

#include "mmpred/synthgen.hpp"
#include "mmpred/tokenizer.hpp"

namespace mmpred::prep {

constexpr int kInputMonths = 6;      // month 7 is the withheld prediction gap
constexpr double kLabMissing = -1.0; // sentinel for never-measured cells
constexpr int kMaxNotes = 20;

// Neoplasm codes (C*, D00-D48) kept verbatim; everything else truncated to
// its 3-character category. Throws encode_error on malformed codes.
std::string aggregate_icd10(const std::string& code);

enum class AgeGroup { youth, adult, senior };
AgeGroup encode_age(int birth_year, int window_start_year);
const char* age_group_name(AgeGroup g);

// Removes every sentence matching (\s[tnmTNM]\d|metastas); other sentences
// are preserved verbatim and in order.
std::string censor_text(const std::string& text);

// Cohort-level vocabularies, built from the development set only. Feature
// order is lexicographic by name and frozen afterwards; encoding never grows
// any vocabulary.
struct Vocabularies {
  std::vector<std::string> static_features;  // age:*, dx:*, gender:* (sorted)
  std::vector<std::string> lab_channels;     // sorted channel ids observed in dev
  std::vector<std::string> med_groups;       // sorted 4-char ATC prefixes + "unknown"
  WordPieceTokenizer tokenizer;
  int window_start_year = 2010;
  int max_tokens = 512;  // cap for the flattened text stream

  int static_dim() const { return static_cast<int>(static_features.size()); }
  int n_lab_channels() const { return static_cast<int>(lab_channels.size()); }
  int n_med_groups() const { return static_cast<int>(med_groups.size()); }
  int feature_index(const std::string& name) const;  // -1 when absent
};

struct BuildOptions {
  int tokenizer_vocab_size = 512;
  int window_start_year = 2010;
  int max_tokens = 512;
};

Vocabularies build_vocabularies(const std::vector<synthgen::RawPatient>& dev_patients,
                                const BuildOptions& options = {});

// One patient's four encoded modalities plus the binary label.
struct MultimodalSample {
  std::string patient_id;
  std::vector<double> static_values;          // binary, aligned to static_features
  std::vector<double> labs;                   // [channels x 6], -1 = missing
  std::vector<double> meds;                   // [groups x 6], monthly counts
  std::vector<std::vector<int>> note_tokens;  // <= 20 notes, most recent last
  std::vector<int> note_months;
  int label = 0;

  double lab_at(int channel, int month0, int n_channels) const {
    (void)n_channels;
    return labs[static_cast<size_t>(channel) * kInputMonths + month0];
  }
};

struct EncodeOptions {
  bool censor_notes = false;  // apply censor_text before tokenizing
};

MultimodalSample encode_patient(const synthgen::RawPatient& p, const Vocabularies& vocab,
                                const EncodeOptions& options = {});

struct EncodedDataset {
  Vocabularies vocab;
  std::vector<MultimodalSample> samples;

  int n() const { return static_cast<int>(samples.size()); }
  std::vector<int> labels() const;
};

EncodedDataset encode_cohort(const std::vector<synthgen::RawPatient>& patients,
                             const Vocabularies& vocab, const EncodeOptions& options = {});

// Oldest-to-newest concatenation with [SEP] between notes, capped to the most
// recent max_tokens entries.
std::vector<int> flatten_notes(const MultimodalSample& s, int max_tokens);

// Dataset file with an embedded schema block (JSON).
void save_dataset(const EncodedDataset& ds, const std::string& path);
EncodedDataset load_dataset(const std::string& path);
std::string schema_json(const Vocabularies& vocab);
uint64_t schema_hash(const Vocabularies& vocab);

}  // namespace mmpred::prep
