#include "autorag/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "autorag/config.hpp"
#include "autorag/error.hpp"
#include "autorag/pipeline.hpp"
#include "autorag/util.hpp"

namespace autorag::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string run_dir;
  std::string queries;
  std::string records = "records.jsonl";
  bool fresh_adapters = false;
  bool resume = false;
  std::optional<std::size_t> stop_after;
};

PipelineConfig effective_config(const Options& o) {
  PipelineConfig c = o.config_path.empty() ? PipelineConfig::defaults() : PipelineConfig::load(o.config_path);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail_usage("--set expects key=value, got '" + s + "'");
    c.set(trim(s.substr(0, eq)), s.substr(eq + 1));
  }
  c.validate();
  return c;
}

fs::path in_run(const Options& o, const std::string& name) { return fs::path(o.run_dir) / name; }

json read_json(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) fail_data("missing " + p.string() + " (" + hint + ")");
  try {
    return json::parse(read_file(p.string()));
  } catch (const json::exception& e) {
    fail_data(p.string() + ": " + e.what());
  }
}

corpus::CorpusIndex load_index(const Options& o) {
  return corpus::CorpusIndex::from_json(read_json(in_run(o, "index.json"), "run `ingest` first"));
}

std::unique_ptr<pipeline::Stores> load_stores(const Options& o, const PipelineConfig& cfg,
                                              bool need_classifier, bool load_adapters) {
  detect::ClassifierParams clf;
  if (need_classifier)
    clf = detect::classifier_from_json(
        read_json(in_run(o, "classifier.json"), "run `train-detector` first").at("classifier"));
  auto stores = std::make_unique<pipeline::Stores>(cfg, load_index(o), clf);
  if (load_adapters && fs::exists(in_run(o, "adapters.json")))
    stores->set_adapters(pipeline::load_adapter_checkpoint(read_json(in_run(o, "adapters.json"), ""), *stores));
  if (!cfg.policy_frozen && fs::exists(in_run(o, "policy.json")))
    stores->set_policy(pipeline::policy_from_json(read_json(in_run(o, "policy.json"), "")));
  return stores;
}

void snapshot(const Options& o, const PipelineConfig& cfg) {
  fs::create_directories(o.run_dir);
  write_file(in_run(o, "config.txt").string(), cfg.to_text());
}

int cmd_ingest(const Options& o, std::ostream& out) {
  const auto cfg = effective_config(o);
  snapshot(o, cfg);
  const auto index = corpus::ingest_corpus(cfg.corpus_path, {cfg.vocab_cap});
  write_file(in_run(o, "index.json").string(), index.serialize());
  out << "indexed " << index.size() << " documents, vocabulary " << index.vocab().size() << "\n";
  return 0;
}

int cmd_train_detector(const Options& o, std::ostream& out) {
  const auto cfg = effective_config(o);
  snapshot(o, cfg);
  auto stores = load_stores(o, cfg, false, false);
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto synonyms = prompt::load_synonym_table_file(cfg.synonyms_path);
  const std::size_t n = cfg.negatives ? cfg.negatives : prompt::max_negative_set_size(stores->index(), rules);
  const auto pairs = prompt::build_negative_set(stores->index(), n, cfg.data_seed, rules, synonyms);
  const auto neg_path = in_run(o, "negatives.jsonl").string();
  write_file(neg_path, "");
  for (const auto& p : pairs) append_line(neg_path, prompt::to_json(p).dump());

  const auto ds = detect::build_detection_dataset(pairs, stores->index().vocab(), stores->embeddings(),
                                                  cfg.detector_batch);
  const auto r = detect::train_classifier(
      ds, {cfg.detector_epochs, cfg.detector_lr, cfg.train_seed, cfg.detector_l2});
  const double acc = detect::accuracy(r.params, ds.samples);
  json j{{"classifier", detect::classifier_to_json(r.params)},
         {"composition", ds.composition.to_json()},
         {"loss_curve", r.loss_curve},
         {"train_accuracy", acc}};
  write_file(in_run(o, "classifier.json").string(), j.dump(2));
  for (const auto& w : ds.composition.warnings) out << "warning: " << w << "\n";
  out << "detector trained on " << ds.composition.batches * ds.composition.batch_size << " samples ("
      << ds.composition.synthetic_fraction * 100.0 << "% synthetic), final loss "
      << r.loss_curve.back() << ", train accuracy " << acc << "\n";
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const auto cfg = effective_config(o);
  snapshot(o, cfg);
  auto stores = load_stores(o, cfg, true, !o.fresh_adapters);
  const auto queries = pipeline::load_queries(o.queries.empty() ? cfg.queries_path : o.queries);
  const auto records = pipeline::run_generate_all(queries, *stores);
  pipeline::write_records(in_run(o, o.records).string(), records);
  std::size_t active = 0, flagged = 0, errors = 0;
  for (const auto& r : records) {
    active += r.adapter_active;
    flagged += r.flagged;
    errors += r.status != "ok";
  }
  out << "generated " << records.size() << " records: " << active << " adapter activations, "
      << flagged << " flagged, " << errors << " errors\n";
  return 0;
}

int cmd_correct(const Options& o, std::ostream& out) {
  const auto cfg = effective_config(o);
  snapshot(o, cfg);
  auto stores = load_stores(o, cfg, true, true);
  const auto queries = pipeline::load_queries(o.queries.empty() ? cfg.queries_path : o.queries);
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto examples = pipeline::prepare_correction(queries, *stores, rules);
  if (examples.empty()) fail_data("correct: no query carries a reference answer");
  pipeline::CorrectOptions opts;
  opts.run_dir = o.run_dir;
  opts.resume = o.resume;
  opts.stop_after_updates = o.stop_after;
  const auto res = pipeline::run_correct(examples, *stores, opts);
  if (!cfg.policy_frozen && res.completed) {
    if (auto p = pipeline::train_policy_from_examples(examples, *stores))
      write_file(in_run(o, "policy.json").string(), pipeline::policy_to_json(*p).dump());
    else
      out << "policy adapter: no document separated flagged from unflagged examples; not trained\n";
  }
  out << (res.completed ? "correction finished: " : "correction interrupted: ") << res.updates
      << " updates, " << res.skips << " skips\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto records = pipeline::read_records(in_run(o, o.records).string());
  std::vector<metrics::RecordMetrics> ms;
  for (const auto& r : records)
    if (r.status == "ok") ms.push_back(r.metrics);
  if (ms.empty()) fail_data("eval: no successful records in " + o.records);
  const auto rep = metrics::aggregate_report(ms);
  json j = rep.to_json();
  j["records"] = o.records;
  j["errors"] = records.size() - ms.size();
  j["gating_mismatches"] = pipeline::verify_gating(records).size();
  write_file(in_run(o, "report.json").string(), j.dump(2));
  write_file(in_run(o, "report.txt").string(), rep.to_text());
  out << rep.to_text();
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto rep = read_json(in_run(o, "report.json"), "run `eval` first");
  out << read_file(in_run(o, "report.txt").string());
  out << "gating mismatches: " << rep.at("gating_mismatches").get<std::size_t>()
      << ", error records: " << rep.at("errors").get<std::size_t>() << "\n";
  if (fs::exists(in_run(o, "trace.jsonl"))) {
    std::size_t updates = 0, skips = 0;
    std::istringstream in(read_file(in_run(o, "trace.jsonl").string()));
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto e = json::parse(line);
      const auto ev = e.value("event", "");
      updates += ev == "update";
      skips += ev == "skip";
    }
    out << "correction trace: " << updates << " updates, " << skips << " skips\n";
  }
  return 0;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented generation with gated LoRA correction"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "flat key = value config file");
  app.add_option("-s,--set", o.sets, "override one config key (key=value)");
  app.add_option("-r,--run-dir", o.run_dir, "run directory")->required();

  auto* ingest = app.add_subcommand("ingest", "build the corpus index");
  auto* train = app.add_subcommand("train-detector", "build negatives and train the detector");
  auto* gen = app.add_subcommand("generate", "answer queries and append RunRecords");
  gen->add_option("-q,--queries", o.queries, "queries file (defaults to the config's)");
  gen->add_option("--records", o.records, "records file name inside the run directory");
  gen->add_flag("--fresh-adapters", o.fresh_adapters, "ignore adapters.json");
  auto* correct = app.add_subcommand("correct", "run the feedback correction loop");
  correct->add_option("-q,--queries", o.queries, "queries with reference answers");
  correct->add_flag("--resume", o.resume, "continue from the latest checkpoint");
  correct->add_option("--stop-after", o.stop_after, "stop after this many updates");
  auto* eval = app.add_subcommand("eval", "aggregate records into a report");
  eval->add_option("--records", o.records, "records file name inside the run directory");
  auto* report = app.add_subcommand("report", "print the latest report and trace summary");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    if (ingest->parsed()) return cmd_ingest(o, out);
    if (train->parsed()) return cmd_train_detector(o, out);
    if (gen->parsed()) return cmd_generate(o, out);
    if (correct->parsed()) return cmd_correct(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (report->parsed()) return cmd_report(o, out);
  } catch (const Error& e) {
    const char* kind = e.kind() == ErrorKind::usage ? "usage" : e.kind() == ErrorKind::data ? "data" : "internal";
    err << kind << " error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::invariant);
  }
  return static_cast<int>(ErrorKind::usage);
}

}  // namespace autorag::cli
