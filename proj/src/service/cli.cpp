#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "relevance/corpus.hpp"
#include "relevance/features.hpp"
#include "relevance/pipeline.hpp"
#include "relevance/service.hpp"
#include "relevance/student.hpp"
#include "relevance/teacher.hpp"
#include "relevance/textrep.hpp"

namespace relevance::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every file a subcommand reads or writes lives under the workspace.
struct Workspace {
  fs::path root;

  fs::path raw() const { return root / "raw"; }
  fs::path pins() const { return root / "pins.jsonl"; }
  fs::path queries() const { return root / "queries.jsonl"; }
  fs::path human_labels() const { return root / "human_labels.jsonl"; }
  fs::path engagement() const { return root / "engagement.jsonl"; }
  fs::path truth() const { return root / "truth.jsonl"; }
  fs::path vocab() const { return root / "vocab.jsonl"; }
  fs::path index() const { return root / "bm25_index.json"; }
  fs::path layout() const { return root / "feature_layout.json"; }
  fs::path teacher() const { return root / "teacher.ckpt"; }
  fs::path distilled() const { return root / "distilled.jsonl"; }
  fs::path sample() const { return root / "sample.jsonl"; }
  fs::path student() const { return root / "student.ckpt"; }
  fs::path eval_report() const { return root / "eval_report.json"; }
  fs::path scaling_report() const { return root / "scaling_report.json"; }
};

struct AppConfig {
  fs::path workspace = "workspace";
  std::uint64_t seed = 1;
  double test_fraction = 0.1;
  double valid_fraction = 0.1;
  std::size_t threads = 1;
  textrep::TextRepConfig text;
  teacher::TeacherTrainConfig teacher;
  student::StudentTrainConfig student;
  pipeline::SyntheticConfig synthetic;
  std::size_t sample_size = 10000;
  std::vector<std::size_t> scale_sizes{10000, 50000, 150000};
  std::size_t human_baseline_size = 5000;
  std::vector<int> ks{8};
  ServiceConfig service;

  // Component seeds are derived from the one global seed.
  std::uint64_t split_seed() const { return seed + 4; }
  std::uint64_t sample_seed() const { return seed + 3; }
  void derive_seeds() {
    synthetic.seed = seed;
    teacher.seed = seed + 1;
    student.seed = seed + 2;
  }
};

json read_json_file(const fs::path& path) {
  auto in = corpus::open_input(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  auto out = corpus::open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

AppConfig load_app_config(const std::optional<std::string>& path) {
  AppConfig c;
  if (!path) return c;
  const json j = read_json_file(*path);
  try {
    c.workspace = j.value("workspace", c.workspace.string());
    c.seed = j.value("seed", c.seed);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.valid_fraction = j.value("valid_fraction", c.valid_fraction);
    c.threads = j.value("threads", c.threads);
    if (j.contains("text")) c.text = textrep::text_config_from_json(j.at("text"));
    if (j.contains("teacher")) c.teacher = teacher::teacher_config_from_json(j.at("teacher"));
    if (j.contains("student")) c.student = student::student_config_from_json(j.at("student"));
    if (j.contains("synthetic")) {
      c.synthetic = pipeline::synthetic_config_from_json(j.at("synthetic"));
    }
    c.sample_size = j.value("sample_size", c.sample_size);
    c.scale_sizes = j.value("scale_sizes", c.scale_sizes);
    c.human_baseline_size = j.value("human_baseline_size", c.human_baseline_size);
    c.ks = j.value("ks", c.ks);
    if (j.contains("service")) c.service = service_config_from_json(j.at("service"));
  } catch (const json::exception& e) {
    throw ParseError("config '" + *path + "': " + e.what());
  }
  return c;
}

bool is_test(const AppConfig& c, const std::string& query_id) {
  return corpus::is_test_query(query_id, c.test_fraction, c.split_seed());
}

/// Reference labels from either a truth file ({query_id, pin_id, level}) or
/// labelled examples; the first record decides the format.
std::vector<corpus::LabeledExample> load_reference_labels(const fs::path& path) {
  bool truth_format = false;
  {
    auto in = corpus::open_input(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        truth_format = json::parse(line).contains("level");
      } catch (const json::exception& e) {
        throw ParseError("'" + path.string() + "' line 1: " + e.what());
      }
      break;
    }
  }
  if (truth_format) {
    const auto truth = pipeline::load_truth(path);
    return pipeline::truth_examples(truth);
  }
  return corpus::load_examples(path);
}

struct Stores {
  std::vector<corpus::PinDocument> pin_records;
  std::vector<corpus::QueryRecord> query_records;
  corpus::PinStore pins;
  corpus::QueryStore queries;

  explicit Stores(const Workspace& ws)
      : pin_records(corpus::load_pins(ws.pins())),
        query_records(corpus::load_queries(ws.queries())),
        pins(pin_records),
        queries(query_records) {}
};

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (auto s : sizes) out += (out.empty() ? "" : ",") + std::to_string(s);
  return out;
}

// --- subcommands ------------------------------------------------------------

void cmd_synth_gen(const AppConfig& c, const fs::path& out_dir) {
  spdlog::info("generating synthetic corpus: {} queries, {} pins, {} engagement pairs",
               c.synthetic.n_queries, c.synthetic.n_pins, c.synthetic.n_engagement);
  const auto corpus = pipeline::generate_synthetic(c.synthetic);
  pipeline::write_synthetic(out_dir, corpus, c.synthetic);
  spdlog::info("wrote {} pins, {} queries, {} annotations, {} engagement records to {}",
               corpus.pins.size(), corpus.queries.size(), corpus.annotations.size(),
               corpus.engagement.size(), out_dir.string());
}

void cmd_ingest(const AppConfig& c, const Workspace& ws, const fs::path& data,
                std::size_t min_freq) {
  auto pins = corpus::load_pins(data / "pins.jsonl");
  auto queries = corpus::load_queries(data / "queries.jsonl");
  const auto annotations = corpus::load_annotations(data / "annotations.jsonl");
  const auto engagement = corpus::load_engagement_log(data / "engagement.jsonl");
  // Duplicate ids are rejected here rather than later.
  const corpus::PinStore pin_check(pins);
  const corpus::QueryStore query_check(queries);
  corpus::apply_engagement(engagement, pins);
  const auto vocab = pipeline::corpus_vocabulary(pins, queries, min_freq);
  const auto human = pipeline::human_examples(annotations);

  corpus::write_jsonl<corpus::PinDocument>(ws.pins(), pins);
  corpus::write_jsonl<corpus::QueryRecord>(ws.queries(), queries);
  corpus::write_jsonl<corpus::LabeledExample>(ws.human_labels(), human);
  corpus::write_jsonl<corpus::EngagementRecord>(ws.engagement(), engagement);
  if (fs::exists(data / "truth.jsonl")) {
    fs::copy_file(data / "truth.jsonl", ws.truth(), fs::copy_options::overwrite_existing);
  }
  vocab.save(ws.vocab());
  std::size_t test_queries = 0;
  for (const auto& q : queries) test_queries += is_test(c, q.query_id) ? 1 : 0;
  write_json_file(ws.root / "ingest_report.json",
                  json{{"pins", pins.size()},
                       {"queries", queries.size()},
                       {"test_queries", test_queries},
                       {"human_labels", human.size()},
                       {"engagement_records", engagement.size()},
                       {"vocab_size", vocab.size()},
                       {"vocab_fingerprint", vocab.fingerprint()}});
  spdlog::info("ingested {} pins, {} queries ({} held out), vocabulary of {} tokens", pins.size(),
               queries.size(), test_queries, vocab.size());
}

void cmd_build_index(const Workspace& ws) {
  const auto pins = corpus::load_pins(ws.pins());
  const auto queries = corpus::load_queries(ws.queries());
  const auto index = features::Bm25Index::build(pins);
  index.save(ws.index());
  const auto layout = features::FeatureLayout::from_corpus(pins, queries);
  write_json_file(ws.layout(), features::to_json(layout));
  spdlog::info("indexed {} pins; feature layout {:016x}", index.num_docs(), layout.fingerprint());
}

void cmd_train_teacher(const AppConfig& c, const Workspace& ws) {
  const Stores stores(ws);
  const auto vocab = textrep::Vocabulary::load(ws.vocab());
  const auto human = corpus::load_examples(ws.human_labels());
  std::vector<corpus::LabeledExample> train_side;
  std::vector<corpus::LabeledExample> test_side;
  for (const auto& ex : human) (is_test(c, ex.query_id) ? test_side : train_side).push_back(ex);
  const auto valid_split = corpus::split_by_query(train_side, c.valid_fraction, c.split_seed() + 1);

  const auto train = pipeline::teacher_examples(valid_split.train, stores.queries, stores.pins,
                                                vocab, c.text);
  const auto valid = pipeline::teacher_examples(valid_split.test, stores.queries, stores.pins,
                                                vocab, c.text);
  const auto test = pipeline::teacher_examples(test_side, stores.queries, stores.pins, vocab,
                                               c.text);
  spdlog::info("training teacher on {} examples ({} validation, {} test)", train.size(),
               valid.size(), test.size());
  const auto trained = teacher::train_teacher(
      train, valid, vocab.size(), c.teacher, [](const teacher::EpochStats& s) {
        spdlog::info("teacher epoch {}: train loss {:.4f}, valid loss {:.4f}, valid acc {:.4f}",
                     s.epoch, s.train_loss, s.valid_loss, s.valid_accuracy);
      });

  json history = json::array();
  for (const auto& s : trained.history) {
    history.push_back({{"epoch", s.epoch},
                       {"train_loss", s.train_loss},
                       {"valid_loss", s.valid_loss},
                       {"valid_accuracy", s.valid_accuracy}});
  }
  json sidecar{{"vocab_fingerprint", vocab.fingerprint()},
               {"config", teacher::to_json(c.teacher)},
               {"text_config", textrep::to_json(c.text)},
               {"best_epoch", trained.best_epoch},
               {"history", history}};
  if (!test.empty()) sidecar["test_report"] = eval::to_json(teacher::eval_teacher(trained.model, test));
  teacher::save_teacher(ws.teacher(), trained.model, c.text, vocab,
                        json{{"best_epoch", trained.best_epoch}});
  write_json_file(ws.root / "teacher.json", sidecar);
  spdlog::info("teacher saved to {} (best epoch {})", ws.teacher().string(), trained.best_epoch);
}

void cmd_distill_label(const AppConfig& c, const Workspace& ws, const fs::path& teacher_path) {
  const Stores stores(ws);
  const auto vocab = textrep::Vocabulary::load(ws.vocab());
  auto loaded = teacher::load_teacher(teacher_path, vocab);
  const teacher::CrossEncoderScorer scorer(std::move(loaded.model), vocab, loaded.text_config);
  const auto log = corpus::load_engagement_log(ws.engagement());
  std::vector<pipeline::UnlabeledPair> pairs;
  std::size_t held_out = 0;
  for (auto& pair : pipeline::pairs_from_engagement(log)) {
    if (is_test(c, pair.query_id)) {
      ++held_out;
    } else {
      pairs.push_back(std::move(pair));
    }
  }
  const auto result = pipeline::label_pool(scorer, pairs, stores.queries, stores.pins, c.threads);
  corpus::write_jsonl<corpus::LabeledExample>(ws.distilled(), result.examples);
  pipeline::LevelCounts histogram{};
  for (const auto& ex : result.examples) {
    ++histogram[static_cast<std::size_t>(ex.label.argmax_level() - 1)];
  }
  write_json_file(ws.root / "distill_report.json",
                  json{{"pairs", pairs.size()},
                       {"held_out_pairs", held_out},
                       {"labeled", result.examples.size()},
                       {"skipped", result.skipped},
                       {"skip_reasons", result.skip_reasons},
                       {"argmax_histogram", histogram}});
  spdlog::info("teacher labelled {} pairs ({} skipped, {} held out)", result.examples.size(),
               result.skipped, held_out);
}

void cmd_sample(const AppConfig& c, const Workspace& ws, const fs::path& input,
                const fs::path& output) {
  const auto pool = corpus::load_examples(input);
  pipeline::SamplingSpec spec;
  spec.target_total = static_cast<std::int64_t>(c.sample_size);
  spec.seed = c.sample_seed();
  const auto result = pipeline::stratified_sample(pool, spec);
  corpus::write_jsonl<corpus::LabeledExample>(output, result.examples);
  write_json_file(ws.root / "sample_report.json", pipeline::to_json(result));
  spdlog::info("sampled {} of {} examples", result.examples.size(), pool.size());
}

features::FeatureLayout load_layout(const Workspace& ws) {
  return features::layout_from_json(read_json_file(ws.layout()));
}

void cmd_train_student(const AppConfig& c, const Workspace& ws, const fs::path& input,
                       const fs::path& output) {
  const Stores stores(ws);
  const auto index = features::Bm25Index::load(ws.index());
  const auto layout = load_layout(ws);
  const pipeline::Featurizer featurize(stores.queries, stores.pins, index, layout);
  const auto examples = corpus::load_examples(input);
  const auto split = corpus::split_by_query(examples, c.valid_fraction, c.sample_seed());
  auto distill = [&](const std::vector<corpus::LabeledExample>& set) {
    std::vector<student::DistilledExample> out;
    out.reserve(set.size());
    for (const auto& ex : set) {
      if (!stores.queries.contains(ex.query_id) || !stores.pins.contains(ex.pin_id)) {
        throw ValidationError("training example (" + ex.query_id + ", " + ex.pin_id +
                              ") refers to an unknown id");
      }
      out.push_back({featurize(ex), ex.label});
    }
    return out;
  };
  const auto train = distill(split.train);
  const auto valid = distill(split.test);
  spdlog::info("training student on {} examples ({} validation)", train.size(), valid.size());
  const auto trained = student::train_student(
      train, valid, layout, c.student, [](const student::StudentEpochStats& s) {
        spdlog::info("student epoch {}: train loss {:.4f}, valid loss {:.4f}", s.epoch,
                     s.train_loss, s.valid_loss);
      });
  json history = json::array();
  for (const auto& s : trained.history) {
    history.push_back(
        {{"epoch", s.epoch}, {"train_loss", s.train_loss}, {"valid_loss", s.valid_loss}});
  }
  student::save_student(output, trained.model, json{{"best_epoch", trained.best_epoch}});
  write_json_file(fs::path(output).replace_extension(".json"),
                  json{{"config", student::to_json(c.student)},
                       {"train_examples", train.size()},
                       {"valid_examples", valid.size()},
                       {"initial_valid_loss", trained.initial_valid_loss},
                       {"best_epoch", trained.best_epoch},
                       {"parameter_count", trained.model.parameter_count()},
                       {"history", history}});
  spdlog::info("student saved to {} (best epoch {})", output.string(), trained.best_epoch);
}

fs::path default_labels(const Workspace& ws) {
  return fs::exists(ws.truth()) ? ws.truth() : ws.human_labels();
}

std::vector<pipeline::EvalExample> held_out_examples(const AppConfig& c, const Stores& stores,
                                                     const features::Bm25Index& index,
                                                     const features::FeatureLayout& layout,
                                                     const fs::path& labels) {
  std::vector<corpus::LabeledExample> test;
  for (auto& ex : load_reference_labels(labels)) {
    if (is_test(c, ex.query_id)) test.push_back(std::move(ex));
  }
  auto out = pipeline::eval_examples(test, stores.queries, stores.pins, index, layout);
  if (out.empty()) throw ValidationError("no held-out labelled pairs in '" + labels.string() + "'");
  return out;
}

void cmd_eval(const AppConfig& c, const Workspace& ws, const fs::path& checkpoint,
              const fs::path& labels, const fs::path& output) {
  if (!fs::exists(checkpoint)) {
    throw Error("checkpoint '" + checkpoint.string() + "' does not exist");
  }
  const auto model = student::load_student(checkpoint);
  const Stores stores(ws);
  const auto index = features::Bm25Index::load(ws.index());
  const auto test = held_out_examples(c, stores, index, model.layout, labels);
  const auto report = pipeline::evaluate_student(model, test, c.ks);
  write_json_file(output, eval::to_json(report));
  std::cout << eval::format_table({{checkpoint.filename().string(), report}});
  spdlog::info("evaluated {} held-out pairs; report written to {}", test.size(), output.string());
}

void cmd_scale_report(const AppConfig& c, const Workspace& ws, const fs::path& labels) {
  const Stores stores(ws);
  const auto index = features::Bm25Index::load(ws.index());
  const auto layout = load_layout(ws);
  const auto test = held_out_examples(c, stores, index, layout, labels);
  const auto pool = corpus::load_examples(ws.distilled());
  const pipeline::Featurizer featurize(stores.queries, stores.pins, index, layout);

  pipeline::ScalingConfig cfg;
  cfg.train = c.student;
  cfg.sample_seed = c.sample_seed();
  cfg.valid_fraction = c.valid_fraction;
  cfg.ks = c.ks;
  spdlog::info("scaling experiment over sizes {} on {} test pairs", join_sizes(c.scale_sizes),
               test.size());
  auto report = pipeline::run_scaling_experiment(pool, c.scale_sizes, test, featurize, layout, cfg);

  if (c.human_baseline_size > 0) {
    // Baseline trained on reference labels of training-side pool pairs.
    std::set<std::pair<std::string, std::string>> pool_pairs;
    for (const auto& ex : pool) pool_pairs.emplace(ex.query_id, ex.pin_id);
    std::vector<corpus::LabeledExample> human;
    for (auto& ex : load_reference_labels(labels)) {
      if (!is_test(c, ex.query_id) && pool_pairs.count({ex.query_id, ex.pin_id})) {
        human.push_back(std::move(ex));
      }
    }
    if (human.size() >= c.human_baseline_size) {
      auto row = pipeline::train_and_evaluate(human, c.human_baseline_size, test, featurize,
                                              layout, cfg);
      row.name = std::to_string(c.human_baseline_size) + " human";
      report.rows.insert(report.rows.begin(), std::move(row));
    } else {
      spdlog::warn("only {} reference-labelled pool pairs; skipping the human baseline",
                   human.size());
    }
  }
  write_json_file(ws.scaling_report(), pipeline::to_json(report));
  const auto table = pipeline::format_scaling_table(report);
  auto txt = corpus::open_output(fs::path(ws.scaling_report()).replace_extension(".txt"));
  txt << table;
  std::cout << table;
}

void cmd_serve(const AppConfig& c) {
  const auto engine = std::make_shared<const ScoringEngine>(ScoringEngine::load(c.service));
  Server server(engine, c.service);
  const int port = server.bind();
  spdlog::info("serving {} pins on {}:{}", engine->pins().size(), c.service.host, port);
  server.listen();
}

std::pair<std::string, int> parse_listen(const std::string& value) {
  const auto colon = value.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--listen expects host:port");
  try {
    return {value.substr(0, colon), std::stoi(value.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ValidationError("--listen expects host:port, got '" + value + "'");
  }
}

}  // namespace

int run_cli(int argc, char** argv) {
  auto logger = spdlog::get("relevance");
  if (!logger) logger = spdlog::stderr_color_mt("relevance");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  CLI::App app{"Search relevance distillation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::string> workspace;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  app.add_option("--config", config_path, "JSON config file")->envname("RELEVANCE_CONFIG");
  app.add_option("--workspace", workspace, "Workspace directory");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--threads", threads, "Worker threads for teacher labelling");

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic corpus");
  std::optional<std::string> synth_out;
  std::optional<std::size_t> n_queries, n_pins, n_engagement, vocab_size, n_concepts, ann_per_query;
  std::optional<double> rater_noise;
  synth->add_option("--out", synth_out, "Output directory (default <workspace>/raw)");
  synth->add_option("--queries", n_queries, "Number of queries");
  synth->add_option("--pins", n_pins, "Number of pins");
  synth->add_option("--engagement", n_engagement, "Number of engagement pairs");
  synth->add_option("--vocab-size", vocab_size, "Filler vocabulary size");
  synth->add_option("--concepts", n_concepts, "Number of latent concepts");
  synth->add_option("--annotations-per-query", ann_per_query, "Rated pairs per query");
  synth->add_option("--rater-noise", rater_noise, "Per-rater off-by-one probability");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate raw data and build the vocabulary");
  std::optional<std::string> data_dir;
  std::size_t min_freq = 1;
  ingest->add_option("--data", data_dir, "Raw data directory (default <workspace>/raw)");
  ingest->add_option("--min-freq", min_freq, "Minimum token count for the vocabulary");

  auto* build_index = app.add_subcommand("build-index", "Build the BM25 index and feature layout");

  // shared training flags
  std::optional<std::size_t> epochs, batch_size, patience;
  std::optional<double> lr;
  auto add_training_flags = [&](CLI::App* sub) {
    sub->add_option("--epochs", epochs, "Training epochs");
    sub->add_option("--batch-size", batch_size, "Minibatch size");
    sub->add_option("--lr", lr, "Adam learning rate");
    sub->add_option("--patience", patience, "Early-stopping patience in epochs");
  };

  auto* train_teacher = app.add_subcommand("train-teacher", "Train the cross-encoder teacher");
  add_training_flags(train_teacher);
  std::optional<std::size_t> max_len, embed_dim, hidden_dim;
  train_teacher->add_option("--max-len", max_len, "Cross-encoder sequence length");
  train_teacher->add_option("--embed-dim", embed_dim, "Token embedding width");
  train_teacher->add_option("--hidden-dim", hidden_dim, "Head hidden width");

  auto* distill = app.add_subcommand("distill-label", "Label the engagement log with the teacher");
  std::optional<std::string> teacher_path;
  distill->add_option("--teacher", teacher_path, "Teacher checkpoint");

  auto* sample = app.add_subcommand("sample", "Stratified sample of the distilled pool");
  std::optional<std::size_t> sample_size;
  std::optional<std::string> sample_in, sample_out;
  sample->add_option("--size", sample_size, "Target sample size");
  sample->add_option("--input", sample_in, "Labelled pool (default <workspace>/distilled.jsonl)");
  sample->add_option("--out", sample_out, "Output file (default <workspace>/sample.jsonl)");

  auto* train_student = app.add_subcommand("train-student", "Train the student on soft labels");
  add_training_flags(train_student);
  std::optional<std::string> student_in, student_out;
  train_student->add_option("--input", student_in, "Training labels (default <workspace>/sample.jsonl)");
  train_student->add_option("--out", student_out, "Checkpoint (default <workspace>/student.ckpt)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a student on held-out queries");
  std::optional<std::string> checkpoint, labels, eval_out;
  std::vector<int> ks;
  eval_cmd->add_option("--checkpoint", checkpoint, "Student checkpoint");
  eval_cmd->add_option("--labels", labels, "Reference labels (truth or labelled examples)");
  eval_cmd->add_option("--out", eval_out, "Report file (default <workspace>/eval_report.json)");
  eval_cmd->add_option("--k", ks, "Cutoffs for nDCG and precision")->delimiter(',');

  auto* scale = app.add_subcommand("scale-report", "Student accuracy versus distilled-set size");
  add_training_flags(scale);
  std::vector<std::size_t> sizes;
  std::optional<std::size_t> human_size;
  scale->add_option("--sizes", sizes, "Comma-separated sample sizes")->delimiter(',');
  scale->add_option("--human-size", human_size, "Reference-label baseline size (0 disables)");
  scale->add_option("--labels", labels, "Reference labels (truth or labelled examples)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP scoring service");
  std::optional<std::string> listen;
  std::optional<std::size_t> max_batch;
  serve->add_option("--listen", listen, "host:port")->envname("RELEVANCE_LISTEN");
  serve->add_option("--checkpoint", checkpoint, "Student checkpoint");
  serve->add_option("--max-batch", max_batch, "Largest accepted batch of pin ids");

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0 && e.get_name() != "CallForHelp") std::cerr << app.help();
    return code == 0 ? 0 : std::max(code, 2);
  }

  try {
    AppConfig c = load_app_config(config_path);
    if (workspace) c.workspace = *workspace;
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.derive_seeds();
    const Workspace ws{c.workspace};

    if (n_queries) c.synthetic.n_queries = *n_queries;
    if (n_pins) c.synthetic.n_pins = *n_pins;
    if (n_engagement) c.synthetic.n_engagement = *n_engagement;
    if (vocab_size) c.synthetic.vocab_size = *vocab_size;
    if (n_concepts) c.synthetic.n_concepts = *n_concepts;
    if (ann_per_query) c.synthetic.annotations_per_query = *ann_per_query;
    if (rater_noise) c.synthetic.rater_noise = *rater_noise;

    auto apply_training = [&](auto& cfg) {
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      if (lr) cfg.adam.lr = *lr;
      if (patience) cfg.patience = *patience;
    };
    if (max_len) c.teacher.max_len = *max_len;
    if (embed_dim) c.teacher.model.embed_dim = *embed_dim;
    if (hidden_dim) c.teacher.model.hidden_dim = *hidden_dim;
    c.text.max_len = c.teacher.max_len;
    if (sample_size) c.sample_size = *sample_size;
    if (!sizes.empty()) c.scale_sizes = sizes;
    if (human_size) c.human_baseline_size = *human_size;
    if (!ks.empty()) c.ks = ks;

    if (synth->parsed()) {
      c.synthetic.validate();
      cmd_synth_gen(c, synth_out ? fs::path(*synth_out) : ws.raw());
    } else if (ingest->parsed()) {
      cmd_ingest(c, ws, data_dir ? fs::path(*data_dir) : ws.raw(), min_freq);
    } else if (build_index->parsed()) {
      cmd_build_index(ws);
    } else if (train_teacher->parsed()) {
      apply_training(c.teacher);
      c.teacher.validate();
      c.text.validate();
      cmd_train_teacher(c, ws);
    } else if (distill->parsed()) {
      cmd_distill_label(c, ws, teacher_path ? fs::path(*teacher_path) : ws.teacher());
    } else if (sample->parsed()) {
      cmd_sample(c, ws, sample_in ? fs::path(*sample_in) : ws.distilled(),
                 sample_out ? fs::path(*sample_out) : ws.sample());
    } else if (train_student->parsed()) {
      apply_training(c.student);
      c.student.validate();
      cmd_train_student(c, ws, student_in ? fs::path(*student_in) : ws.sample(),
                        student_out ? fs::path(*student_out) : ws.student());
    } else if (eval_cmd->parsed()) {
      cmd_eval(c, ws, checkpoint ? fs::path(*checkpoint) : ws.student(),
               labels ? fs::path(*labels) : default_labels(ws),
               eval_out ? fs::path(*eval_out) : ws.eval_report());
    } else if (scale->parsed()) {
      apply_training(c.student);
      c.student.validate();
      cmd_scale_report(c, ws, labels ? fs::path(*labels) : default_labels(ws));
    } else if (serve->parsed()) {
      if (c.service.student_checkpoint.empty()) c.service.student_checkpoint = ws.student();
      if (c.service.bm25_index.empty()) c.service.bm25_index = ws.index();
      if (c.service.pin_store.empty()) c.service.pin_store = ws.pins();
      if (c.service.query_store.empty() && fs::exists(ws.queries())) {
        c.service.query_store = ws.queries();
      }
      if (checkpoint) c.service.student_checkpoint = *checkpoint;
      if (max_batch) c.service.max_batch_size = *max_batch;
      if (listen) std::tie(c.service.host, c.service.port) = parse_listen(*listen);
      cmd_serve(c);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}

}  // namespace relevance::service
