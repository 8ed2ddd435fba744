#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "relevance/pipeline.hpp"
#include "relevance/util/rng.hpp"

namespace relevance::pipeline {

using nlohmann::json;

void SyntheticConfig::validate() const {
  if (n_queries == 0 || n_pins == 0) throw ValidationError("synthetic corpus needs queries and pins");
  if (n_concepts < 9 || n_concepts > 64) {
    throw ValidationError("synthetic n_concepts must lie in 9..64");
  }
  if (synonyms == 0 || raters == 0 || embed_dim == 0 || vocab_size < 16) {
    throw ValidationError("synthetic counts must be positive (vocab_size at least 16)");
  }
  if (rater_noise < 0.0 || rater_noise > 1.0 || missing_embedding < 0.0 ||
      missing_embedding > 1.0 || embed_noise < 0.0) {
    throw ValidationError("synthetic noise rates out of range");
  }
  for (const auto* prior : {&annotation_prior, &engagement_prior}) {
    double total = 0.0;
    for (double p : *prior) {
      if (p < 0.0) throw ValidationError("synthetic level priors must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw ValidationError("synthetic level priors must have positive mass");
  }
}

json to_json(const SyntheticConfig& c) {
  return json{{"seed", c.seed},
              {"n_queries", c.n_queries},
              {"n_pins", c.n_pins},
              {"vocab_size", c.vocab_size},
              {"n_concepts", c.n_concepts},
              {"synonyms", c.synonyms},
              {"annotations_per_query", c.annotations_per_query},
              {"raters", c.raters},
              {"rater_noise", c.rater_noise},
              {"n_engagement", c.n_engagement},
              {"embed_dim", c.embed_dim},
              {"embed_noise", c.embed_noise},
              {"missing_embedding", c.missing_embedding},
              {"annotation_prior", c.annotation_prior},
              {"engagement_prior", c.engagement_prior}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  c.seed = j.value("seed", c.seed);
  c.n_queries = j.value("n_queries", c.n_queries);
  c.n_pins = j.value("n_pins", c.n_pins);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_concepts = j.value("n_concepts", c.n_concepts);
  c.synonyms = j.value("synonyms", c.synonyms);
  c.annotations_per_query = j.value("annotations_per_query", c.annotations_per_query);
  c.raters = j.value("raters", c.raters);
  c.rater_noise = j.value("rater_noise", c.rater_noise);
  c.n_engagement = j.value("n_engagement", c.n_engagement);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.embed_noise = j.value("embed_noise", c.embed_noise);
  c.missing_embedding = j.value("missing_embedding", c.missing_embedding);
  c.annotation_prior = j.value("annotation_prior", c.annotation_prior);
  c.engagement_prior = j.value("engagement_prior", c.engagement_prior);
  c.validate();
  return c;
}

json to_json(const TruthRecord& t) {
  return json{{"query_id", t.query_id}, {"pin_id", t.pin_id}, {"level", t.level}};
}

TruthRecord truth_from_json(const json& j) {
  TruthRecord t{j.at("query_id").get<std::string>(), j.at("pin_id").get<std::string>(),
                j.at("level").get<int>()};
  if (t.level < 1 || t.level > corpus::kNumLevels) {
    throw ValidationError("truth level " + std::to_string(t.level) + " outside 1..5");
  }
  return t;
}

namespace {

constexpr std::size_t kQueryConcepts = 4;
constexpr std::size_t kPinConcepts = 5;

// Word lengths per text field; one filler slot in the chosen field of each
// group is replaced by the concept's surface form.
constexpr std::size_t kCaptionLen = 6;
constexpr std::size_t kTitleLen = 3;
constexpr std::size_t kDescriptionLen = 6;
constexpr std::size_t kLinkTitleLen = 3;
constexpr std::size_t kLinkDescriptionLen = 6;
constexpr std::size_t kBoardLen = 2;
constexpr std::size_t kEngagedLen = 3;

const std::array<const char*, 4> kFormats = {"image", "idea", "product", "video"};
constexpr std::size_t kDomains = 40;

std::string make_id(char prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*zu", prefix, width, i);
  return buf;
}

/// Distinct pronounceable pseudo-words.
class WordFactory {
 public:
  explicit WordFactory(Rng& rng) : rng_(rng) {}

  std::string fresh() {
    static constexpr std::string_view kOnset = "bdfgklmnprstvz";
    static constexpr std::string_view kVowel = "aeiou";
    for (;;) {
      const std::size_t syllables = 2 + static_cast<std::size_t>(rng_.below(2));
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += kOnset[rng_.below(kOnset.size())];
        w += kVowel[rng_.below(kVowel.size())];
      }
      if (rng_.bernoulli(0.5)) w += kOnset[rng_.below(kOnset.size())];
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng& rng_;
  std::unordered_set<std::string> used_;
};

/// Zipf(1) sampler over filler ranks.
class Zipf {
 public:
  explicit Zipf(std::size_t n) : cdf_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += 1.0 / static_cast<double>(r + 1);
      cdf_[r] = total;
    }
  }

  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

std::vector<std::size_t> choose(Rng& rng, std::vector<std::size_t> items, std::size_t k) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<double> unit_normal(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

struct Generator {
  const SyntheticConfig& cfg;
  Rng rng;
  Zipf zipf;
  std::vector<std::string> filler;
  std::vector<std::vector<std::string>> surfaces;  // [concept][form]
  std::vector<std::vector<double>> concept_vectors;
  std::vector<std::uint64_t> pin_masks;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> pins_by_mask;
  std::vector<std::vector<std::size_t>> query_concepts;

  explicit Generator(const SyntheticConfig& c) : cfg(c), rng(c.seed), zipf(c.vocab_size) {
    WordFactory words(rng);
    surfaces.resize(cfg.n_concepts);
    for (auto& forms : surfaces) {
      for (std::size_t s = 0; s < cfg.synonyms; ++s) forms.push_back(words.fresh());
    }
    for (std::size_t i = 0; i < cfg.vocab_size; ++i) filler.push_back(words.fresh());
    for (std::size_t c = 0; c < cfg.n_concepts; ++c) {
      concept_vectors.push_back(unit_normal(rng, cfg.embed_dim));
    }
  }

  const std::string& filler_word() { return filler[zipf.draw(rng)]; }

  const std::string& surface(std::size_t concept_id) {
    return surfaces[concept_id][rng.below(cfg.synonyms)];
  }

  std::vector<std::string> filler_words(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(filler_word());
    return out;
  }

  void plant(std::vector<std::string>& field, std::size_t concept_id) {
    field[rng.below(field.size())] = surface(concept_id);
  }

  std::optional<std::vector<double>> embedding(const std::vector<std::size_t>& concepts) {
    if (rng.bernoulli(cfg.missing_embedding)) return std::nullopt;
    std::vector<double> v(cfg.embed_dim, 0.0);
    for (auto c : concepts) {
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += concept_vectors[c][k];
    }
    double norm = 0.0;
    for (double& x : v) {
      x += cfg.embed_noise * rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
    return v;
  }

  std::vector<std::size_t> all_concepts() const {
    std::vector<std::size_t> v(cfg.n_concepts);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
  }

  corpus::PinDocument make_pin(std::size_t index) {
    corpus::PinDocument pin;
    pin.pin_id = make_id('p', index, 6);
    const auto concepts = choose(rng, all_concepts(), kPinConcepts);
    std::uint64_t mask = 0;
    for (auto c : concepts) mask |= std::uint64_t{1} << c;
    pin_masks.push_back(mask);
    pins_by_mask[mask].push_back(index);

    auto caption = filler_words(kCaptionLen);
    auto title = filler_words(kTitleLen);
    auto description = filler_words(kDescriptionLen);
    auto link_title = filler_words(kLinkTitleLen);
    auto link_description = filler_words(kLinkDescriptionLen);
    std::array<std::vector<std::string>, 2> boards{filler_words(kBoardLen),
                                                   filler_words(kBoardLen)};
    while (boards[1] == boards[0]) boards[1] = filler_words(kBoardLen);

    plant(caption, concepts[0]);
    plant(rng.bernoulli(0.5) ? title : description, concepts[1]);
    plant(rng.bernoulli(0.5) ? link_title : link_description, concepts[2]);
    plant(boards[rng.below(2)], concepts[3]);

    std::vector<std::string> engaged{surface(concepts[4])};
    while (engaged.size() < kEngagedLen) {
      const auto& w = filler_word();
      if (std::find(engaged.begin(), engaged.end(), w) == engaged.end()) engaged.push_back(w);
    }
    rng.shuffle(std::span<std::string>(engaged));

    pin.synthetic_caption = join(caption);
    pin.title = join(title);
    pin.description = join(description);
    pin.link_title = join(link_title);
    pin.link_description = join(link_description);
    pin.board_titles = {join(boards[0]), join(boards[1])};
    pin.engaged_query_tokens = std::move(engaged);
    pin.pin_embedding = embedding(concepts);
    pin.categorical_attrs["format"] = kFormats[rng.below(kFormats.size())];
    pin.categorical_attrs["domain"] = "site" + std::to_string(rng.below(kDomains)) + ".example";
    return pin;
  }

  corpus::QueryRecord make_query(std::size_t index) {
    corpus::QueryRecord q;
    q.query_id = make_id('q', index, 5);
    auto concepts = choose(rng, all_concepts(), kQueryConcepts);
    std::vector<std::string> words;
    for (auto c : concepts) words.push_back(surface(c));
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                 filler_word());
    q.text = join(words);
    q.query_embedding = embedding(concepts);
    std::sort(concepts.begin(), concepts.end());
    query_concepts.push_back(std::move(concepts));
    return q;
  }

  /// A pin sharing exactly `shared` concepts with query `qi`, if one is found.
  std::optional<std::size_t> find_pin(std::size_t qi, std::size_t shared) {
    constexpr int kTries = 400;
    const auto& q = query_concepts[qi];
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < cfg.n_concepts; ++c) {
      if (!std::binary_search(q.begin(), q.end(), c)) others.push_back(c);
    }
    for (int t = 0; t < kTries; ++t) {
      std::uint64_t mask = 0;
      for (auto c : choose(rng, q, shared)) mask |= std::uint64_t{1} << c;
      for (auto c : choose(rng, others, kPinConcepts - shared)) mask |= std::uint64_t{1} << c;
      auto it = pins_by_mask.find(mask);
      if (it != pins_by_mask.end()) return it->second[rng.below(it->second.size())];
    }
    return std::nullopt;
  }

  int truth_level(std::size_t qi, std::size_t pi) const {
    std::uint64_t qmask = 0;
    for (auto c : query_concepts[qi]) qmask |= std::uint64_t{1} << c;
    return 1 + std::popcount(qmask & pin_masks[pi]);
  }

  int noisy_rating(int level) {
    if (!rng.bernoulli(cfg.rater_noise)) return level;
    int r = level + (rng.bernoulli(0.5) ? 1 : -1);
    if (r < 1) r = 2;
    if (r > corpus::kNumLevels) r = corpus::kNumLevels - 1;
    return r;
  }

  std::int64_t binomial(std::int64_t n, double p) {
    std::int64_t k = 0;
    for (std::int64_t i = 0; i < n; ++i) k += rng.bernoulli(p) ? 1 : 0;
    return k;
  }
};

std::size_t draw_level(Rng& rng, const std::array<double, corpus::kNumLevels>& prior) {
  return rng.categorical(std::span<const double>(prior));
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Generator gen(config);
  SyntheticCorpus out;
  out.pins.reserve(config.n_pins);
  for (std::size_t i = 0; i < config.n_pins; ++i) out.pins.push_back(gen.make_pin(i));
  out.queries.reserve(config.n_queries);
  for (std::size_t i = 0; i < config.n_queries; ++i) out.queries.push_back(gen.make_query(i));

  std::unordered_set<std::uint64_t> truth_seen;
  auto record_truth = [&](std::size_t qi, std::size_t pi) {
    const std::uint64_t key = (static_cast<std::uint64_t>(qi) << 32) | pi;
    if (truth_seen.insert(key).second) {
      out.truth.push_back({out.queries[qi].query_id, out.pins[pi].pin_id, gen.truth_level(qi, pi)});
    }
  };

  for (std::size_t qi = 0; qi < config.n_queries; ++qi) {
    std::unordered_set<std::size_t> used;
    for (std::size_t a = 0; a < config.annotations_per_query; ++a) {
      const auto level = draw_level(gen.rng, config.annotation_prior) + 1;
      const auto pin = gen.find_pin(qi, level - 1);
      if (!pin || !used.insert(*pin).second) continue;
      corpus::RaterAnnotation ann{out.queries[qi].query_id, out.pins[*pin].pin_id, {}};
      const int truth = gen.truth_level(qi, *pin);
      for (std::size_t r = 0; r < config.raters; ++r) ann.ratings.push_back(gen.noisy_rating(truth));
      out.annotations.push_back(std::move(ann));
      record_truth(qi, *pin);
    }
  }

  std::unordered_set<std::uint64_t> logged;
  const std::size_t max_attempts = 3 * config.n_engagement;
  for (std::size_t attempt = 0;
       attempt < max_attempts && out.engagement.size() < config.n_engagement; ++attempt) {
    const auto qi = static_cast<std::size_t>(gen.rng.below(config.n_queries));
    const auto level = draw_level(gen.rng, config.engagement_prior) + 1;
    const auto pin = gen.find_pin(qi, level - 1);
    if (!pin) continue;
    const std::uint64_t key = (static_cast<std::uint64_t>(qi) << 32) | *pin;
    if (!logged.insert(key).second) continue;
    corpus::EngagementRecord rec;
    rec.query_id = out.queries[qi].query_id;
    rec.pin_id = out.pins[*pin].pin_id;
    rec.impressions = 5 + static_cast<std::int64_t>(gen.rng.below(46));
    const double p = 0.01 + 0.02 * static_cast<double>(level - 1);
    rec.repins = gen.binomial(rec.impressions, p);
    rec.long_clicks = gen.binomial(rec.impressions, p);
    out.engagement.push_back(std::move(rec));
    record_truth(qi, *pin);
  }
  return out;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus,
                     const SyntheticConfig& config) {
  std::filesystem::create_directories(dir);
  corpus::write_jsonl<corpus::PinDocument>(dir / "pins.jsonl", corpus.pins);
  corpus::write_jsonl<corpus::QueryRecord>(dir / "queries.jsonl", corpus.queries);
  corpus::write_jsonl<corpus::RaterAnnotation>(dir / "annotations.jsonl", corpus.annotations);
  corpus::write_jsonl<corpus::EngagementRecord>(dir / "engagement.jsonl", corpus.engagement);
  corpus::write_jsonl<TruthRecord>(dir / "truth.jsonl", corpus.truth);
  auto out = corpus::open_output(dir / "synth_config.json");
  out << to_json(config).dump(2) << '\n';
}

std::vector<TruthRecord> load_truth(const std::filesystem::path& path) {
  auto in = corpus::open_input(path);
  std::vector<TruthRecord> out;
  corpus::for_each_jsonl(in, [&](const json& j, std::size_t line) {
    try {
      out.push_back(truth_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace relevance::pipeline
