#include "relevance/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <sstream>
#include <unordered_set>

#include "relevance/util/hash.hpp"

namespace relevance::corpus {

using nlohmann::json;

// --- SoftLabel --------------------------------------------------------------

SoftLabel::SoftLabel() { probs_.fill(1.0 / kNumLevels); }

SoftLabel::SoftLabel(const std::array<double, kNumLevels>& probs) : probs_(probs) {
  double total = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      throw ValidationError("soft label has a negative or non-finite entry");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "soft label mass " << total << " is not 1";
    throw ValidationError(msg.str());
  }
}

SoftLabel SoftLabel::one_hot(int level) {
  if (level < 1 || level > kNumLevels) {
    throw ValidationError("relevance level " + std::to_string(level) + " outside 1..5");
  }
  std::array<double, kNumLevels> p{};
  p[static_cast<std::size_t>(level - 1)] = 1.0;
  return SoftLabel(p);
}

int SoftLabel::argmax_level() const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs_.size(); ++c) {
    if (probs_[c] > probs_[best]) best = c;
  }
  return static_cast<int>(best) + 1;
}

double SoftLabel::expected_gain() const {
  double g = 0.0;
  for (std::size_t c = 0; c < probs_.size(); ++c) g += probs_[c] * 0.25 * static_cast<double>(c);
  return g;
}

// --- RecordStore ------------------------------------------------------------

namespace {

const std::string& record_id(const PinDocument& pin) { return pin.pin_id; }
const std::string& record_id(const QueryRecord& query) { return query.query_id; }
const char* id_name(const PinDocument*) { return "pin_id"; }
const char* id_name(const QueryRecord*) { return "query_id"; }

}  // namespace

template <typename Record>
RecordStore<Record>::RecordStore(std::vector<Record> records) : records_(std::move(records)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& id = record_id(records_[i]);
    if (!index_.emplace(id, i).second) {
      throw ValidationError(std::string("duplicate ") + id_name(static_cast<Record*>(nullptr)) +
                            " '" + id + "'");
    }
  }
}

template <typename Record>
const Record* RecordStore<Record>::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

template <typename Record>
const Record& RecordStore<Record>::at(std::string_view id) const {
  const Record* r = find(id);
  if (r == nullptr) throw ValidationError("unknown id '" + std::string(id) + "'");
  return *r;
}

template class RecordStore<PinDocument>;
template class RecordStore<QueryRecord>;

// --- JSON mapping -----------------------------------------------------------

namespace {

std::string optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ParseError(std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

std::vector<std::string> optional_string_list(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_array()) throw ParseError(std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::vector<double> number_list(const json& v, const char* key) {
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw ParseError(std::string("field '") + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::optional<std::vector<double>> optional_vector(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return number_list(*it, key);
}

std::int64_t optional_count(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return 0;
  if (!it->is_number_integer()) throw ParseError(std::string("field '") + key + "' must be an integer");
  const auto v = it->get<std::int64_t>();
  if (v < 0) throw ValidationError(std::string("field '") + key + "' must be non-negative");
  return v;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

PinDocument pin_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("pin record must be a JSON object");
  PinDocument pin;
  pin.pin_id = required_string(j, "pin_id");
  if (pin.pin_id.empty()) throw ValidationError("pin_id must be non-empty");
  pin.title = optional_string(j, "title");
  pin.description = optional_string(j, "description");
  pin.link_title = optional_string(j, "link_title");
  pin.link_description = optional_string(j, "link_description");
  pin.synthetic_caption = optional_string(j, "synthetic_caption");
  pin.board_titles = optional_string_list(j, "board_titles");

  std::unordered_set<std::string> seen;
  for (auto& tok : optional_string_list(j, "engaged_query_tokens")) {
    if (seen.insert(tok).second) pin.engaged_query_tokens.push_back(std::move(tok));
  }
  pin.pin_embedding = optional_vector(j, "pin_embedding");

  if (auto it = j.find("categorical_attrs"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError("field 'categorical_attrs' must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw ParseError("categorical attribute '" + k + "' must be a string");
      pin.categorical_attrs[k] = v.get<std::string>();
    }
  }
  if (auto it = j.find("engagement_rate"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError("field 'engagement_rate' must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_number()) throw ParseError("engagement rate for '" + k + "' must be a number");
      const double r = v.get<double>();
      if (!(r >= 0.0 && r <= 1.0)) {
        throw ValidationError("engagement rate for '" + k + "' outside [0,1]");
      }
      pin.engagement_rate[k] = r;
    }
  }
  return pin;
}

json to_json(const PinDocument& pin) {
  json j;
  j["pin_id"] = pin.pin_id;
  j["title"] = pin.title;
  j["description"] = pin.description;
  j["link_title"] = pin.link_title;
  j["link_description"] = pin.link_description;
  j["synthetic_caption"] = pin.synthetic_caption;
  j["board_titles"] = pin.board_titles;
  j["engaged_query_tokens"] = pin.engaged_query_tokens;
  if (pin.pin_embedding) j["pin_embedding"] = *pin.pin_embedding;
  j["categorical_attrs"] = pin.categorical_attrs;
  j["engagement_rate"] = pin.engagement_rate;
  return j;
}

QueryRecord query_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("query record must be a JSON object");
  QueryRecord q;
  q.query_id = required_string(j, "query_id");
  if (q.query_id.empty()) throw ValidationError("query_id must be non-empty");
  q.text = required_string(j, "text");
  if (is_blank(q.text)) throw ValidationError("query '" + q.query_id + "' has empty text");
  q.query_embedding = optional_vector(j, "query_embedding");
  return q;
}

json to_json(const QueryRecord& query) {
  json j;
  j["query_id"] = query.query_id;
  j["text"] = query.text;
  if (query.query_embedding) j["query_embedding"] = *query.query_embedding;
  return j;
}

RaterAnnotation annotation_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("annotation must be a JSON object");
  RaterAnnotation a;
  a.query_id = required_string(j, "query_id");
  a.pin_id = required_string(j, "pin_id");
  auto it = j.find("ratings");
  if (it == j.end() || !it->is_array()) throw ParseError("annotation needs a 'ratings' array");
  for (const auto& r : *it) {
    if (!r.is_number_integer()) throw ParseError("ratings must be integers");
    a.ratings.push_back(r.get<int>());
  }
  return a;
}

json to_json(const RaterAnnotation& ann) {
  return json{{"query_id", ann.query_id}, {"pin_id", ann.pin_id}, {"ratings", ann.ratings}};
}

EngagementRecord engagement_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("engagement record must be a JSON object");
  EngagementRecord r;
  r.query_id = required_string(j, "query_id");
  r.pin_id = required_string(j, "pin_id");
  r.repins = optional_count(j, "repins");
  r.long_clicks = optional_count(j, "long_clicks");
  r.impressions = optional_count(j, "impressions");
  return r;
}

json to_json(const EngagementRecord& rec) {
  return json{{"query_id", rec.query_id},
              {"pin_id", rec.pin_id},
              {"repins", rec.repins},
              {"long_clicks", rec.long_clicks},
              {"impressions", rec.impressions}};
}

json to_json(const SoftLabel& label) { return json(label.probs()); }

SoftLabel soft_label_from_json(const json& j) {
  const auto v = number_list(j, "label");
  if (v.size() != kNumLevels) throw ParseError("soft label must have 5 entries");
  std::array<double, kNumLevels> p{};
  std::copy(v.begin(), v.end(), p.begin());
  return SoftLabel(p);
}

LabeledExample example_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("labeled example must be a JSON object");
  LabeledExample ex;
  ex.query_id = required_string(j, "query_id");
  ex.pin_id = required_string(j, "pin_id");
  auto it = j.find("label");
  if (it == j.end()) throw ParseError("labeled example needs a 'label'");
  ex.label = soft_label_from_json(*it);
  const auto source = optional_string(j, "source");
  if (source.empty() || source == "human") {
    ex.source = LabelSource::kHuman;
  } else if (source == "teacher") {
    ex.source = LabelSource::kTeacher;
  } else {
    throw ParseError("unknown label source '" + source + "'");
  }
  return ex;
}

json to_json(const LabeledExample& ex) {
  return json{{"query_id", ex.query_id},
              {"pin_id", ex.pin_id},
              {"label", to_json(ex.label)},
              {"source", ex.source == LabelSource::kHuman ? "human" : "teacher"}};
}

// --- JSONL ingestion --------------------------------------------------------

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return in;
}

void for_each_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    try {
      fn(record, line_no);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

namespace {

template <typename Record, typename Parse>
std::vector<Record> read_records(std::istream& in, Parse parse) {
  std::vector<Record> out;
  std::unordered_set<std::string> ids;
  for_each_jsonl(in, [&](const json& j, std::size_t) {
    Record r = parse(j);
    const auto& id = record_id(r);
    if (!ids.insert(id).second) {
      throw ValidationError(std::string("duplicate ") + id_name(static_cast<Record*>(nullptr)) +
                            " '" + id + "'");
    }
    out.push_back(std::move(r));
  });
  return out;
}

template <typename Record, typename Parse>
std::vector<Record> read_all(std::istream& in, Parse parse) {
  std::vector<Record> out;
  for_each_jsonl(in, [&](const json& j, std::size_t) { out.push_back(parse(j)); });
  return out;
}

}  // namespace

std::vector<PinDocument> read_pins(std::istream& in) {
  auto pins = read_records<PinDocument>(in, pin_from_json);
  std::optional<std::size_t> dim;
  for (const auto& p : pins) {
    if (!p.pin_embedding) continue;
    if (dim && *dim != p.pin_embedding->size()) {
      throw ValidationError("pin '" + p.pin_id + "' embedding has dimension " +
                            std::to_string(p.pin_embedding->size()) + ", expected " +
                            std::to_string(*dim));
    }
    dim = p.pin_embedding->size();
  }
  return pins;
}

std::vector<PinDocument> load_pins(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_pins(in);
}

std::vector<QueryRecord> read_queries(std::istream& in) {
  return read_records<QueryRecord>(in, query_from_json);
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_queries(in);
}

std::vector<RaterAnnotation> load_annotations(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_all<RaterAnnotation>(in, annotation_from_json);
}

std::vector<EngagementRecord> load_engagement_log(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_all<EngagementRecord>(in, engagement_from_json);
}

std::vector<LabeledExample> load_examples(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_all<LabeledExample>(in, example_from_json);
}

EmbeddingStore read_embedding_store(std::istream& in, std::size_t expected_dim) {
  EmbeddingStore store;
  for_each_jsonl(in, [&](const json& j, std::size_t) {
    if (!j.is_object()) throw ParseError("embedding record must be a JSON object");
    auto id = required_string(j, "id");
    auto it = j.find("vector");
    if (it == j.end()) throw ParseError("embedding record needs a 'vector'");
    auto vec = number_list(*it, "vector");
    if (vec.size() != expected_dim) {
      throw ValidationError("embedding '" + id + "' has dimension " + std::to_string(vec.size()) +
                            ", expected " + std::to_string(expected_dim));
    }
    if (!store.emplace(id, std::move(vec)).second) {
      throw ValidationError("duplicate embedding id '" + id + "'");
    }
  });
  return store;
}

EmbeddingStore load_embedding_store(const std::filesystem::path& path, std::size_t expected_dim) {
  auto in = open_input(path);
  return read_embedding_store(in, expected_dim);
}

void write_embedding_store(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  auto out = open_output(path);
  for (const auto& [id, vec] : rows) out << json{{"id", id}, {"vector", vec}}.dump() << '\n';
}

// --- aggregation and splitting ----------------------------------------------

SoftLabel aggregate_soft_label(const RaterAnnotation& ann) {
  if (ann.ratings.empty()) {
    throw ValidationError("annotation for (" + ann.query_id + ", " + ann.pin_id + ") has no ratings");
  }
  std::array<std::size_t, kNumLevels> counts{};
  for (int r : ann.ratings) {
    if (r < 1 || r > kNumLevels) {
      throw ValidationError("rating " + std::to_string(r) + " outside 1..5 for (" + ann.query_id +
                            ", " + ann.pin_id + ")");
    }
    ++counts[static_cast<std::size_t>(r - 1)];
  }
  const double n = static_cast<double>(ann.ratings.size());
  std::array<double, kNumLevels> p{};
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = static_cast<double>(counts[c]) / n;
  return SoftLabel(p);
}

void apply_engagement(std::span<const EngagementRecord> log, std::vector<PinDocument>& pins) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < pins.size(); ++i) by_id.emplace(pins[i].pin_id, i);
  for (const auto& rec : log) {
    auto it = by_id.find(rec.pin_id);
    if (it == by_id.end()) continue;
    double rate = 0.0;
    if (rec.impressions > 0) {
      rate = static_cast<double>(rec.repins + rec.long_clicks) /
             static_cast<double>(rec.impressions);
      rate = std::clamp(rate, 0.0, 1.0);
    }
    pins[it->second].engagement_rate[rec.query_id] = rate;
  }
}

double query_bucket(std::string_view query_id, std::uint64_t seed) {
  std::string key = std::to_string(seed);
  key += ':';
  key += query_id;
  return unit_interval(mix64(fnv1a64(key)));
}

bool is_test_query(std::string_view query_id, double test_fraction, std::uint64_t seed) {
  return query_bucket(query_id, seed) < test_fraction;
}

Split split_by_query(std::span<const LabeledExample> examples, double test_fraction,
                     std::uint64_t seed) {
  Split split;
  for (const auto& ex : examples) {
    if (is_test_query(ex.query_id, test_fraction, seed)) {
      split.test.push_back(ex);
    } else {
      split.train.push_back(ex);
    }
  }
  return split;
}

}  // namespace relevance::corpus
