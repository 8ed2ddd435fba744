#include "relevance/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "relevance/util/hash.hpp"

namespace relevance::features {

using nlohmann::json;

namespace {

constexpr int kIndexVersion = 1;

std::unordered_set<std::string_view> unique_view(std::span<const std::string> tokens) {
  return {tokens.begin(), tokens.end()};
}

}  // namespace

// --- BM25 -------------------------------------------------------------------

Bm25Index Bm25Index::build(std::span<const corpus::PinDocument> pins, Bm25Params params) {
  if (pins.empty()) throw ValidationError("cannot build a BM25 index over an empty corpus");
  Bm25Index index;
  index.num_docs_ = pins.size();
  index.params_ = params;
  std::array<std::size_t, kNumFamilies> total_len{};
  for (const auto& pin : pins) {
    const auto tokens = PinTokens::of(pin);
    for (std::size_t f = 0; f < kNumFamilies; ++f) {
      const auto& field_tokens = tokens.families[f];
      total_len[f] += field_tokens.size();
      for (const auto& t : unique_view(field_tokens)) ++index.fields_[f].df[std::string(t)];
    }
  }
  for (std::size_t f = 0; f < kNumFamilies; ++f) {
    index.fields_[f].avgdl =
        static_cast<double>(total_len[f]) / static_cast<double>(index.num_docs_);
  }
  return index;
}

std::size_t Bm25Index::df(FieldFamily family, std::string_view token) const {
  const auto& table = field(family).df;
  auto it = table.find(std::string(token));
  return it == table.end() ? 0 : it->second;
}

double Bm25Index::idf(FieldFamily family, std::string_view token) const {
  const double n = static_cast<double>(num_docs_);
  const double d = static_cast<double>(df(family, token));
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

json Bm25Index::to_json() const {
  json fields = json::object();
  for (std::size_t f = 0; f < kNumFamilies; ++f) {
    fields[std::string(textrep::family_name(static_cast<FieldFamily>(f)))] =
        json{{"avgdl", fields_[f].avgdl}, {"df", fields_[f].df}};
  }
  return json{{"version", kIndexVersion},
              {"params", {{"k1", params_.k1}, {"b", params_.b}}},
              {"num_docs", num_docs_},
              {"fields", fields}};
}

Bm25Index Bm25Index::from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kIndexVersion) {
      throw ValidationError("unsupported BM25 index version " + j.at("version").dump());
    }
    Bm25Index index;
    index.num_docs_ = j.at("num_docs").get<std::size_t>();
    if (index.num_docs_ == 0) throw ValidationError("BM25 index has no documents");
    index.params_.k1 = j.at("params").at("k1").get<double>();
    index.params_.b = j.at("params").at("b").get<double>();
    for (const auto& [name, stats] : j.at("fields").items()) {
      auto& field = index.fields_[static_cast<std::size_t>(textrep::family_from_name(name))];
      field.avgdl = stats.at("avgdl").get<double>();
      for (const auto& [token, count] : stats.at("df").items()) {
        const auto df = count.get<std::size_t>();
        if (df > index.num_docs_) {
          throw ValidationError("document frequency of '" + token + "' exceeds the corpus size");
        }
        field.df.emplace(token, df);
      }
    }
    return index;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed BM25 index: ") + e.what());
  }
}

void Bm25Index::save(const std::filesystem::path& path) const {
  auto out = corpus::open_output(path);
  out << to_json().dump() << '\n';
}

Bm25Index Bm25Index::load(const std::filesystem::path& path) {
  auto in = corpus::open_input(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

double bm25_score(const Bm25Index& index, FieldFamily family,
                  std::span<const std::string> query_tokens,
                  std::span<const std::string> doc_field_tokens) {
  const double avgdl = index.avgdl(family);
  if (avgdl <= 0.0 || doc_field_tokens.empty()) return 0.0;
  std::unordered_map<std::string_view, std::size_t> tf;
  for (const auto& t : doc_field_tokens) ++tf[t];
  const double k1 = index.params().k1;
  const double b = index.params().b;
  const double dl = static_cast<double>(doc_field_tokens.size());
  const double norm = k1 * (1.0 - b + b * dl / avgdl);
  double score = 0.0;
  // Sorted so the floating-point sum does not depend on hash order.
  const std::set<std::string_view> unique_query(query_tokens.begin(), query_tokens.end());
  for (const auto& t : unique_query) {
    auto it = tf.find(t);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    score += index.idf(family, t) * f * (k1 + 1.0) / (f + norm);
  }
  return score;
}

double overlap_fraction(std::span<const std::string> query_tokens,
                        std::span<const std::string> field_tokens) {
  const auto q = unique_view(query_tokens);
  if (q.empty()) return 0.0;
  const auto f = unique_view(field_tokens);
  std::size_t shared = 0;
  for (const auto& t : q) shared += f.count(t);
  return static_cast<double>(shared) / static_cast<double>(q.size());
}

std::vector<double> numerical_embed(double x, const NumericalEmbedConfig& cfg) {
  if (cfg.w.size() != cfg.v.size()) {
    throw ShapeError("numerical embedding weight and bias differ in length");
  }
  std::vector<double> out(cfg.w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x * cfg.w[i] + cfg.v[i];
  return out;
}

// --- layout -----------------------------------------------------------------

std::int32_t CategoricalSpec::id_of(std::string_view value) const {
  auto it = std::lower_bound(values.begin(), values.end(), value);
  if (it == values.end() || *it != value) return 0;
  return static_cast<std::int32_t>(it - values.begin()) + 1;
}

FeatureLayout FeatureLayout::from_corpus(std::span<const corpus::PinDocument> pins,
                                         std::span<const corpus::QueryRecord> queries) {
  FeatureLayout layout;
  std::map<std::string, std::set<std::string>> attrs;
  for (const auto& pin : pins) {
    if (layout.pin_dim == 0 && pin.pin_embedding) layout.pin_dim = pin.pin_embedding->size();
    for (const auto& [name, value] : pin.categorical_attrs) attrs[name].insert(value);
  }
  for (const auto& q : queries) {
    if (q.query_embedding) {
      layout.query_dim = q.query_embedding->size();
      break;
    }
  }
  for (const auto& [name, values] : attrs) {
    layout.categoricals.push_back({name, {values.begin(), values.end()}});
  }
  return layout;
}

json to_json(const FeatureLayout& layout) {
  json cats = json::array();
  for (const auto& c : layout.categoricals) cats.push_back({{"name", c.name}, {"values", c.values}});
  return json{{"query_dim", layout.query_dim},
              {"pin_dim", layout.pin_dim},
              {"num_scalars", kNumScalars},
              {"num_flags", kNumFlags},
              {"categoricals", cats}};
}

FeatureLayout layout_from_json(const json& j) {
  try {
    if (j.at("num_scalars").get<std::size_t>() != kNumScalars ||
        j.at("num_flags").get<std::size_t>() != kNumFlags) {
      throw ValidationError("feature layout has a different scalar/flag arity");
    }
    FeatureLayout layout;
    layout.query_dim = j.at("query_dim").get<std::size_t>();
    layout.pin_dim = j.at("pin_dim").get<std::size_t>();
    for (const auto& c : j.at("categoricals")) {
      CategoricalSpec spec{c.at("name").get<std::string>(),
                           c.at("values").get<std::vector<std::string>>()};
      if (!std::is_sorted(spec.values.begin(), spec.values.end())) {
        throw ValidationError("categorical values of '" + spec.name + "' are not sorted");
      }
      layout.categoricals.push_back(std::move(spec));
    }
    return layout;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed feature layout: ") + e.what());
  }
}

std::uint64_t FeatureLayout::fingerprint() const { return fnv1a64(to_json(*this).dump()); }

// --- assembly ---------------------------------------------------------------

std::array<double, kNumScalars> StudentFeatureVector::scalars() const {
  std::array<double, kNumScalars> s{};
  std::copy(bm25.begin(), bm25.end(), s.begin());
  std::copy(overlap.begin(), overlap.end(), s.begin() + kNumFamilies);
  s[kNumScalars - 1] = engagement_rate;
  return s;
}

PinTokens PinTokens::of(const corpus::PinDocument& pin) {
  const auto imputed = textrep::impute_title_description(pin);
  PinTokens out;
  for (std::size_t f = 0; f < kNumFamilies; ++f) {
    out.families[f] = textrep::family_tokens(imputed, static_cast<FieldFamily>(f));
  }
  return out;
}

namespace {

bool fill_embedding(const std::optional<std::vector<double>>& source, std::size_t dim,
                    std::vector<double>& out) {
  out.assign(dim, 0.0);
  if (!source || source->size() != dim || dim == 0) return false;
  out = *source;
  return true;
}

}  // namespace

StudentFeatureVector assemble_features(const corpus::QueryRecord& query,
                                       std::span<const std::string> query_tokens,
                                       const corpus::PinDocument& pin,
                                       const PinTokens& pin_tokens, const Bm25Index& index,
                                       const FeatureLayout& layout) {
  StudentFeatureVector fv;
  fv.layout_fingerprint = layout.fingerprint();
  fv.flags[0] = fill_embedding(query.query_embedding, layout.query_dim, fv.query_embedding);
  fv.flags[1] = fill_embedding(pin.pin_embedding, layout.pin_dim, fv.pin_embedding);
  for (std::size_t f = 0; f < kNumFamilies; ++f) {
    const auto family = static_cast<FieldFamily>(f);
    fv.bm25[f] = bm25_score(index, family, query_tokens, pin_tokens.families[f]);
    fv.overlap[f] = overlap_fraction(query_tokens, pin_tokens.families[f]);
  }
  if (auto it = pin.engagement_rate.find(query.query_id); it != pin.engagement_rate.end()) {
    fv.engagement_rate = it->second;
    fv.flags[2] = 1;
  }
  fv.categorical_ids.reserve(layout.categoricals.size());
  for (const auto& spec : layout.categoricals) {
    auto it = pin.categorical_attrs.find(spec.name);
    fv.categorical_ids.push_back(it == pin.categorical_attrs.end() ? 0 : spec.id_of(it->second));
  }
  return fv;
}

StudentFeatureVector assemble_features(const corpus::QueryRecord& query,
                                       const corpus::PinDocument& pin, const Bm25Index& index,
                                       const FeatureLayout& layout) {
  const auto query_tokens = textrep::tokenize(query.text);
  return assemble_features(query, query_tokens, pin, PinTokens::of(pin), index, layout);
}

}  // namespace relevance::features
