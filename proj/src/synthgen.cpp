#include "mmpred/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmpred/error.hpp"
#include "mmpred/rng.hpp"

namespace mmpred::synthgen {

namespace {

using nlohmann::json;

// Cohort-level latent structure drawn once per config.
struct CohortModel {
  struct LabChannel {
    std::string id;
    double log_mu;     // lognormal location
    double log_sigma;  // lognormal scale
    double p_observed; // per-month observation probability
  };
  struct MedChannel {
    std::string code;   // full ATC-like code
    double base_rate;   // monthly Poisson rate
  };
  struct Comorbidity {
    std::string code;
    double base_prob;
  };
  std::vector<LabChannel> labs;
  std::vector<MedChannel> meds;
  std::vector<Comorbidity> comorbidities;
  std::vector<std::string> words;
};

const char* kSyllables[] = {"ka", "ro", "lin", "ste", "mal", "vid", "tor", "sel", "an",  "pro",
                            "gre", "dos", "fen", "lab", "mik", "sur", "pla", "nod", "ter", "vas",
                            "kli", "rad", "med", "pat", "ul",  "tra", "son", "bi",  "op",  "si"};

std::string make_word(Rng& rng) {
  const int syllables = static_cast<int>(rng.uniform_int(2, 4));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kSyllables[rng.uniform_int(0, static_cast<int>(std::size(kSyllables)) - 1)];
  }
  return w;
}

CohortModel build_cohort_model(const GeneratorConfig& cfg, Rng& rng) {
  CohortModel m;
  for (int c = 0; c < cfg.n_lab_channels; ++c) {
    CohortModel::LabChannel ch;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "NPU%04d", c + 1);
    ch.id = buf;
    ch.log_mu = rng.uniform(0.5, 2.0);
    ch.log_sigma = rng.uniform(0.15, 0.35);
    ch.p_observed = rng.uniform(0.55, 0.9);
    m.labs.push_back(ch);
  }
  // ATC-like codes; consecutive pairs share the 4-char pharmacological
  // subgroup so grouping actually aggregates.
  const char atc_letters[] = "ABCDGJLMNR";
  for (int c = 0; c < cfg.n_med_channels; ++c) {
    CohortModel::MedChannel ch;
    const char l1 = atc_letters[(c / 2) % 10];
    const int level2 = 1 + (c / 2) % 16;
    const char l3 = static_cast<char>('A' + (c / 2) % 6);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%c%02d%c%c%02d", l1, level2, l3,
                  static_cast<char>('A' + c % 4), 1 + c % 7);
    ch.code = buf;
    ch.base_rate = rng.uniform(0.3, 1.6);
    m.meds.push_back(ch);
  }
  const char* pool[] = {"I10.9", "E11.9", "J45.1", "M54.5", "N39.0", "K21.0",
                        "F32.9", "E78.5", "I48.9", "J44.9", "D12.6", "E66.0"};
  const int n_codes = std::min<int>(cfg.n_comorbidity_codes, std::size(pool));
  for (int i = 0; i < n_codes; ++i) {
    m.comorbidities.push_back({pool[i], rng.uniform(0.05, 0.35)});
  }
  for (int w = 0; w < cfg.vocab_size; ++w) m.words.push_back(make_word(rng));
  return m;
}

std::string make_sentence(const CohortModel& m, Rng& rng) {
  const int n_words = static_cast<int>(rng.uniform_int(3, 8));
  std::string s;
  for (int i = 0; i < n_words; ++i) {
    if (i) s += ' ';
    s += m.words[rng.uniform_int(0, static_cast<int>(m.words.size()) - 1)];
  }
  s += '.';
  return s;
}

int sample_category(const std::array<double, 3>& probs, Rng& rng) {
  const double u = rng.uniform();
  if (u < probs[0]) return 0;
  if (u < probs[0] + probs[1]) return 1;
  return 2;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_patients < 20) {
    throw config_error("generator: n_patients must be >= 20, got " + std::to_string(n_patients));
  }
  if (positive_fraction <= 0.0 || positive_fraction >= 1.0) {
    throw config_error("generator: positive_fraction must lie in (0,1), got " +
                       std::to_string(positive_fraction));
  }
  if (months < 7) {
    throw config_error("generator: months must be >= 7, got " + std::to_string(months));
  }
  if (n_lab_channels < 1 || n_med_channels < 1) {
    throw config_error("generator: need at least one lab and one med channel");
  }
  if (n_comorbidity_codes < 0 || n_comorbidity_codes > 12) {
    throw config_error("generator: n_comorbidity_codes must lie in [0,12], got " +
                       std::to_string(n_comorbidity_codes));
  }
  if (vocab_size < 30) {
    throw config_error("generator: vocab_size must be >= 30, got " + std::to_string(vocab_size));
  }
  if (notes_per_patient_range.first < 1 ||
      notes_per_patient_range.second < notes_per_patient_range.first) {
    throw config_error("generator: invalid notes_per_patient_range");
  }
  if (signal.text_effect_prob < 0.0 || signal.text_effect_prob > 1.0 ||
      signal.explicit_metastasis_token_prob < 0.0 ||
      signal.explicit_metastasis_token_prob > 1.0) {
    throw config_error("generator: signal probabilities must lie in [0,1]");
  }
  for (double e : signal.lab_effect) {
    if (!std::isfinite(e)) throw config_error("generator: non-finite lab_effect");
  }
  for (double e : signal.med_effect) {
    if (!std::isfinite(e) || e < -1.0) {
      throw config_error("generator: med_effect must be finite and >= -1");
    }
  }
  for (const auto& [code, odds] : signal.static_effect) {
    if (!std::isfinite(odds) || odds <= 0.0) {
      throw config_error("generator: static_effect odds ratio must be positive for " + code);
    }
  }
  for (int mo : signal.lab_effect_months) {
    if (mo < 1 || mo > months) throw config_error("generator: lab_effect month out of range");
  }
}

std::vector<RawPatient> generate_cohort(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed ^ 0x53594e5448ULL);
  Rng cohort_rng = root.fork(0);
  const CohortModel model = build_cohort_model(cfg, cohort_rng);

  // Exact prevalence: round(n * fraction) positives, shuffled.
  const int n_pos = static_cast<int>(std::llround(cfg.n_patients * cfg.positive_fraction));
  std::vector<int> labels(cfg.n_patients, 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  Rng label_rng = root.fork(1);
  label_rng.shuffle(labels);

  const int in_window = 6;  // months 1..6 carry features; month 7 is the gap
  std::vector<RawPatient> cohort;
  cohort.reserve(cfg.n_patients);
  for (int i = 0; i < cfg.n_patients; ++i) {
    Rng rng = root.fork(100 + i);
    RawPatient p;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%06d", i + 1);
    p.patient_id = idbuf;
    p.label = labels[i];

    // Cross-modal XOR flags: positives get exactly one of (lab, text),
    // negatives get both or neither, keeping each flag marginally
    // independent of the label.
    bool lab_flag = p.label == 1;
    bool text_flag = p.label == 1;
    if (cfg.signal.cross_modal_xor) {
      const bool coin = rng.bernoulli(0.5);
      if (p.label == 1) {
        lab_flag = coin;
        text_flag = !coin;
      } else {
        lab_flag = coin;
        text_flag = coin;
      }
    }

    // Demographics.
    const auto& gender_probs = p.label == 1 ? cfg.gender_probs_pos : cfg.gender_probs_neg;
    const auto& age_probs = p.label == 1 ? cfg.age_probs_pos : cfg.age_probs_neg;
    p.gender = static_cast<Gender>(sample_category(gender_probs, rng));
    const int age_group = sample_category(age_probs, rng);
    int age = 0;
    switch (age_group) {
      case 0: age = static_cast<int>(rng.uniform_int(16, 24)); break;
      case 1: age = static_cast<int>(rng.uniform_int(25, 64)); break;
      default: age = static_cast<int>(rng.uniform_int(65, 92)); break;
    }
    p.birth_year = cfg.window_start_year - age;

    // Primary cancer diagnosis anchors month 1 for every patient.
    p.diagnosis_events.push_back({1, cfg.primary_cancer_code});

    // Comorbidities, odds-ratio shifted for positives where planted.
    for (const auto& com : model.comorbidities) {
      double prob = com.base_prob;
      if (p.label == 1) {
        auto it = cfg.signal.static_effect.find(com.code);
        if (it != cfg.signal.static_effect.end()) {
          const double odds = prob / (1.0 - prob) * it->second;
          prob = odds / (1.0 + odds);
        }
      }
      if (rng.bernoulli(prob)) {
        p.diagnosis_events.push_back(
            {static_cast<int>(rng.uniform_int(1, in_window)), com.code});
      }
    }

    // Labs: monthly observations per channel; the planted shift follows
    // lab_flag in the configured months only.
    for (size_t c = 0; c < model.labs.size(); ++c) {
      const auto& ch = model.labs[c];
      const double shift =
          c < cfg.signal.lab_effect.size() && lab_flag ? cfg.signal.lab_effect[c] : 0.0;
      for (int mo = 1; mo <= cfg.months; ++mo) {
        if (!rng.bernoulli(ch.p_observed)) continue;
        const int n_meas = static_cast<int>(rng.uniform_int(1, 3));
        const bool shifted_month =
            std::find(cfg.signal.lab_effect_months.begin(), cfg.signal.lab_effect_months.end(),
                      mo) != cfg.signal.lab_effect_months.end();
        for (int k = 0; k < n_meas; ++k) {
          double v = rng.lognormal(ch.log_mu, ch.log_sigma);
          if (shifted_month) v += shift;
          p.lab_events.push_back({mo, ch.id, v});
        }
      }
    }

    // Medications: monthly Poisson counts, rate-lifted for positives.
    for (size_t c = 0; c < model.meds.size(); ++c) {
      const auto& ch = model.meds[c];
      double rate = ch.base_rate;
      if (p.label == 1 && c < cfg.signal.med_effect.size()) {
        rate *= 1.0 + cfg.signal.med_effect[c];
      }
      for (int mo = 1; mo <= cfg.months; ++mo) {
        const int count = rng.poisson(rate);
        for (int k = 0; k < count; ++k) p.med_events.push_back({mo, ch.code});
      }
    }

    // Notes from the template grammar; suspicion tokens and explicit
    // metastasis sentences are planted per note.
    const int n_notes = static_cast<int>(
        rng.uniform_int(cfg.notes_per_patient_range.first, cfg.notes_per_patient_range.second));
    std::vector<int> order_in_month(cfg.months + 1, 0);
    for (int note_i = 0; note_i < n_notes; ++note_i) {
      const int mo = static_cast<int>(rng.uniform_int(1, in_window));
      const int n_sentences = static_cast<int>(rng.uniform_int(1, 4));
      std::vector<std::string> sentences;
      for (int s = 0; s < n_sentences; ++s) sentences.push_back(make_sentence(model, rng));
      if (text_flag && !cfg.signal.text_effect_tokens.empty()) {
        // Per-sentence insertion of one suspicion token.
        for (auto& sentence : sentences) {
          if (!rng.bernoulli(cfg.signal.text_effect_prob)) continue;
          const auto& tok = cfg.signal.text_effect_tokens[rng.uniform_int(
              0, static_cast<int>(cfg.signal.text_effect_tokens.size()) - 1)];
          sentence.insert(sentence.size() - 1, " " + tok);
        }
      }
      if (p.label == 1 && rng.bernoulli(cfg.signal.explicit_metastasis_token_prob)) {
        sentences.push_back("imaging suggests metastas growth stage T2 N1.");
      }
      std::string text;
      for (size_t s = 0; s < sentences.size(); ++s) {
        if (s) text += ' ';
        text += sentences[s];
      }
      p.notes.push_back({mo, order_in_month[mo]++, text});
    }

    // Month 7: metastasis diagnosis for positives, routine follow-up events
    // for everyone (the inclusion rule holds by construction).
    if (p.label == 1) {
      const char* mets[] = {"C77.0", "C78.0", "C79.5"};
      p.diagnosis_events.push_back({cfg.months, mets[rng.uniform_int(0, 2)]});
    }
    const auto& followup_ch = model.labs[rng.uniform_int(0, model.labs.size() - 1)];
    p.lab_events.push_back(
        {cfg.months, followup_ch.id, rng.lognormal(followup_ch.log_mu, followup_ch.log_sigma)});

    std::sort(p.diagnosis_events.begin(), p.diagnosis_events.end(),
              [](const auto& a, const auto& b) { return a.month < b.month; });
    std::sort(p.lab_events.begin(), p.lab_events.end(), [](const auto& a, const auto& b) {
      return a.month != b.month ? a.month < b.month : a.channel < b.channel;
    });
    std::sort(p.med_events.begin(), p.med_events.end(), [](const auto& a, const auto& b) {
      return a.month != b.month ? a.month < b.month : a.code < b.code;
    });
    std::sort(p.notes.begin(), p.notes.end(), [](const auto& a, const auto& b) {
      return a.month != b.month ? a.month < b.month : a.order < b.order;
    });
    cohort.push_back(std::move(p));
  }
  return cohort;
}

GeneratorConfig cohort_fixture(const std::string& name, uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.name = name;
  // Shared default planted signal, moderate on every modality.
  cfg.signal.lab_effect = {1.2, 0.9};
  cfg.signal.med_effect = {0.8, 0.5};
  cfg.signal.static_effect = {{"I10.9", 2.2}, {"E11.9", 1.8}};
  cfg.signal.text_effect_tokens = {"progression", "oro"};
  cfg.signal.text_effect_prob = 0.45;
  cfg.signal.explicit_metastasis_token_prob = 0.25;

  if (name == "breast-like") {
    cfg.n_patients = 743;
    cfg.positive_fraction = 281.0 / 743.0;
    cfg.primary_cancer_code = "C50";
    cfg.gender_probs_pos = {275.0 / 281, 6.0 / 281, 0.0};
    cfg.gender_probs_neg = {459.0 / 462, 3.0 / 462, 0.0};
    cfg.age_probs_pos = {1.0 / 281, 160.0 / 281, 120.0 / 281};
    cfg.age_probs_neg = {0.0, 220.0 / 462, 242.0 / 462};
  } else if (name == "colon-like") {
    cfg.n_patients = 387;
    cfg.positive_fraction = 111.0 / 387.0;
    cfg.primary_cancer_code = "C18";
    cfg.gender_probs_pos = {51.0 / 111, 60.0 / 111, 0.0};
    cfg.gender_probs_neg = {141.0 / 276, 134.0 / 276, 1.0 / 276};
    cfg.age_probs_pos = {1.0 / 111, 44.0 / 111, 66.0 / 111};
    cfg.age_probs_neg = {5.0 / 276, 82.0 / 276, 189.0 / 276};
  } else if (name == "lung-like") {
    cfg.n_patients = 870;
    cfg.positive_fraction = 458.0 / 870.0;
    cfg.primary_cancer_code = "C34";
    cfg.gender_probs_pos = {256.0 / 458, 202.0 / 458, 0.0};
    cfg.gender_probs_neg = {217.0 / 412, 195.0 / 412, 0.0};
    cfg.age_probs_pos = {1.0 / 458, 150.0 / 458, 307.0 / 458};
    cfg.age_probs_neg = {0.0, 80.0 / 412, 332.0 / 412};
  } else if (name == "prostate-like") {
    cfg.n_patients = 1890;
    cfg.positive_fraction = 515.0 / 1890.0;
    cfg.primary_cancer_code = "C61";
    cfg.gender_probs_pos = {0.0, 1.0, 0.0};
    cfg.gender_probs_neg = {0.0, 1.0, 0.0};
    cfg.age_probs_pos = {0.0, 104.0 / 515, 411.0 / 515};
    cfg.age_probs_neg = {0.0, 348.0 / 1375, 1027.0 / 1375};
  } else {
    throw config_error("unknown cohort fixture '" + name +
                       "' (expected breast-like|colon-like|lung-like|prostate-like)");
  }
  return cfg;
}

std::vector<std::string> fixture_names() {
  return {"breast-like", "colon-like", "lung-like", "prostate-like"};
}

const char* gender_name(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    default: return "other";
  }
}

Gender gender_from_name(const std::string& name) {
  if (name == "female") return Gender::female;
  if (name == "male") return Gender::male;
  if (name == "other") return Gender::other;
  throw encode_error("unknown gender '" + name + "'");
}

std::string cohort_to_jsonl(const std::vector<RawPatient>& cohort) {
  std::ostringstream os;
  for (const auto& p : cohort) {
    json j;
    j["patient_id"] = p.patient_id;
    j["gender"] = gender_name(p.gender);
    j["birth_year"] = p.birth_year;
    j["label"] = p.label;
    json dx = json::array();
    for (const auto& e : p.diagnosis_events) dx.push_back({{"month", e.month}, {"code", e.code}});
    j["diagnosis_events"] = dx;
    json labs = json::array();
    for (const auto& e : p.lab_events) {
      labs.push_back({{"month", e.month}, {"channel", e.channel}, {"value", e.value}});
    }
    j["lab_events"] = labs;
    json meds = json::array();
    for (const auto& e : p.med_events) meds.push_back({{"month", e.month}, {"code", e.code}});
    j["med_events"] = meds;
    json notes = json::array();
    for (const auto& e : p.notes) {
      notes.push_back({{"month", e.month}, {"order", e.order}, {"text", e.text}});
    }
    j["notes"] = notes;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<RawPatient> cohort_from_jsonl(const std::string& text) {
  std::vector<RawPatient> cohort;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    RawPatient p;
    p.patient_id = j.at("patient_id").get<std::string>();
    p.gender = gender_from_name(j.at("gender").get<std::string>());
    p.birth_year = j.at("birth_year").get<int>();
    p.label = j.at("label").get<int>();
    for (const auto& e : j.at("diagnosis_events")) {
      p.diagnosis_events.push_back({e.at("month").get<int>(), e.at("code").get<std::string>()});
    }
    for (const auto& e : j.at("lab_events")) {
      p.lab_events.push_back({e.at("month").get<int>(), e.at("channel").get<std::string>(),
                              e.at("value").get<double>()});
    }
    for (const auto& e : j.at("med_events")) {
      p.med_events.push_back({e.at("month").get<int>(), e.at("code").get<std::string>()});
    }
    for (const auto& e : j.at("notes")) {
      p.notes.push_back({e.at("month").get<int>(), e.at("order").get<int>(),
                         e.at("text").get<std::string>()});
    }
    cohort.push_back(std::move(p));
  }
  return cohort;
}

void save_cohort(const std::vector<RawPatient>& cohort, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("cannot write cohort file " + path);
  os << cohort_to_jsonl(cohort);
}

std::vector<RawPatient> load_cohort(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pipeline_error("cannot read cohort file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return cohort_from_jsonl(buf.str());
}

}  // namespace mmpred::synthgen
