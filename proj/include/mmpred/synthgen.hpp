#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mmpred::synthgen {

enum class Gender { female, male, other };

// Planted per-modality signal. A default-constructed plan carries no signal
// at all, making the label statistically independent of every feature.
struct SignalPlan {
  // Additive mean shift per lab channel, applied to positives in
  // `lab_effect_months` only (temporal signal by construction).
  std::vector<double> lab_effect;
  std::vector<int> lab_effect_months = {4, 5, 6};
  // Relative rate increase per med channel for positives (0 = neutral).
  std::vector<double> med_effect;
  // Comorbidity code -> odds ratio for positives (1 = neutral).
  std::map<std::string, double> static_effect;
  // Suspicion tokens inserted into positives' notes with this probability.
  std::vector<std::string> text_effect_tokens;
  double text_effect_prob = 0.0;
  // Probability a positive note contains an explicit metastasis sentence
  // (literal "metastas" plus TNM-like tokens) matching the censoring regex.
  double explicit_metastasis_token_prob = 0.0;
  // Cross-modal mode: label = lab_flag XOR text_flag, with each flag
  // marginally independent of the label. lab_effect follows lab_flag and
  // text insertion follows text_flag instead of the label.
  bool cross_modal_xor = false;

  bool is_null() const {
    return lab_effect.empty() && med_effect.empty() && static_effect.empty() &&
           text_effect_tokens.empty() && explicit_metastasis_token_prob == 0.0 &&
           !cross_modal_xor;
  }
};

struct GeneratorConfig {
  int n_patients = 0;
  double positive_fraction = 0.0;
  uint64_t seed = 0;
  SignalPlan signal;
  int n_lab_channels = 8;
  int n_med_channels = 10;
  int n_comorbidity_codes = 12;  // size of the background diagnosis pool
  int vocab_size = 400;  // closed word list size for the note grammar
  std::pair<int, int> notes_per_patient_range = {3, 10};
  int months = 7;

  std::string name;  // fixture name, empty for ad-hoc configs
  std::string primary_cancer_code = "C50";
  int window_start_year = 2010;
  // Demographic marginals per class: {female, male, other} / {youth, adult, senior}.
  std::array<double, 3> gender_probs_pos = {0.5, 0.48, 0.02};
  std::array<double, 3> gender_probs_neg = {0.5, 0.48, 0.02};
  std::array<double, 3> age_probs_pos = {0.05, 0.45, 0.5};
  std::array<double, 3> age_probs_neg = {0.05, 0.45, 0.5};

  void validate() const;  // throws config_error naming the violated bound
};

struct DiagnosisEvent {
  int month = 0;  // 1-based
  std::string code;
};

struct LabEvent {
  int month = 0;
  std::string channel;
  double value = 0.0;
};

struct MedEvent {
  int month = 0;
  std::string code;
};

struct NoteEvent {
  int month = 0;
  int order = 0;  // intra-month order
  std::string text;
};

struct RawPatient {
  std::string patient_id;
  Gender gender = Gender::female;
  int birth_year = 0;
  std::vector<DiagnosisEvent> diagnosis_events;
  std::vector<LabEvent> lab_events;
  std::vector<MedEvent> med_events;
  std::vector<NoteEvent> notes;
  int label = 0;
};

std::vector<RawPatient> generate_cohort(const GeneratorConfig& config);

// Table-1-shaped configs: "breast-like" (743/281), "colon-like" (387/111),
// "lung-like" (870/458), "prostate-like" (1890/515).
GeneratorConfig cohort_fixture(const std::string& name, uint64_t seed = 1);
std::vector<std::string> fixture_names();

// Newline-delimited JSON interchange format (one patient object per line).
std::string cohort_to_jsonl(const std::vector<RawPatient>& cohort);
std::vector<RawPatient> cohort_from_jsonl(const std::string& text);
void save_cohort(const std::vector<RawPatient>& cohort, const std::string& path);
std::vector<RawPatient> load_cohort(const std::string& path);

const char* gender_name(Gender g);
Gender gender_from_name(const std::string& name);

}  // namespace mmpred::synthgen
