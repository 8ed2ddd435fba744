#include <unordered_map>

#include "relevance/pipeline.hpp"

namespace relevance::pipeline {

textrep::Vocabulary corpus_vocabulary(std::span<const corpus::PinDocument> pins,
                                      std::span<const corpus::QueryRecord> queries,
                                      std::size_t min_freq) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& q : queries) {
    for (auto& t : textrep::tokenize(q.text)) ++counts[std::move(t)];
  }
  for (const auto& pin : pins) {
    const auto imputed = textrep::impute_title_description(pin);
    for (auto family : textrep::kDefaultFieldOrder) {
      for (auto& t : textrep::family_tokens(imputed, family)) ++counts[std::move(t)];
    }
  }
  return textrep::Vocabulary::build(counts, min_freq);
}

std::vector<teacher::TeacherExample> teacher_examples(
    std::span<const corpus::LabeledExample> examples, const corpus::QueryStore& queries,
    const corpus::PinStore& pins, const textrep::Vocabulary& vocab,
    const textrep::TextRepConfig& config) {
  std::vector<teacher::TeacherExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto* q = queries.find(ex.query_id);
    const auto* p = pins.find(ex.pin_id);
    if (q == nullptr || p == nullptr) continue;
    out.push_back({teacher::encode_pair(q->text, *p, vocab, config), ex.label});
  }
  return out;
}

std::vector<corpus::LabeledExample> human_examples(
    std::span<const corpus::RaterAnnotation> annotations) {
  std::vector<corpus::LabeledExample> out;
  out.reserve(annotations.size());
  for (const auto& ann : annotations) {
    out.push_back({ann.query_id, ann.pin_id, corpus::aggregate_soft_label(ann),
                   corpus::LabelSource::kHuman});
  }
  return out;
}

std::vector<corpus::LabeledExample> truth_examples(std::span<const TruthRecord> truth) {
  std::vector<corpus::LabeledExample> out;
  out.reserve(truth.size());
  for (const auto& t : truth) {
    out.push_back({t.query_id, t.pin_id, corpus::SoftLabel::one_hot(t.level),
                   corpus::LabelSource::kHuman});
  }
  return out;
}

std::vector<EvalExample> eval_examples(std::span<const corpus::LabeledExample> examples,
                                       const corpus::QueryStore& queries,
                                       const corpus::PinStore& pins,
                                       const features::Bm25Index& index,
                                       const features::FeatureLayout& layout) {
  const Featurizer featurize(queries, pins, index, layout);
  std::vector<EvalExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto* q = queries.find(ex.query_id);
    const auto* p = pins.find(ex.pin_id);
    if (q == nullptr || p == nullptr) continue;
    out.push_back({ex.query_id, ex.pin_id, featurize(*q, *p), ex.label});
  }
  return out;
}

Featurizer::Featurizer(const corpus::QueryStore& queries, const corpus::PinStore& pins,
                       const features::Bm25Index& index, const features::FeatureLayout& layout)
    : queries_(queries), pins_(pins), index_(index), layout_(layout) {}

features::StudentFeatureVector Featurizer::operator()(const corpus::LabeledExample& ex) const {
  return (*this)(queries_.at(ex.query_id), pins_.at(ex.pin_id));
}

features::StudentFeatureVector Featurizer::operator()(const corpus::QueryRecord& query,
                                                      const corpus::PinDocument& pin) const {
  return features::assemble_features(query, pin, index_, layout_);
}

}  // namespace relevance::pipeline
