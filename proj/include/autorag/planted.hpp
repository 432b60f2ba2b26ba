#pragma once

// Planted-bias task: a corpus of birthplace facts whose adapters are first
// trained to answer every question with an unrelated registry note, then
// corrected with the feedback loop. Measured on held-out phrasings.

#include <string>
#include <vector>

#include "autorag/config.hpp"
#include "autorag/pipeline.hpp"

namespace autorag::planted {

struct PlantedConfig {
  std::string dir;  // corpus.jsonl, train.jsonl, heldout.jsonl, rules.json, synonyms.json
  PipelineConfig pipeline;
  std::size_t inject_epochs = 30;
  double inject_lr = 1e-2;
  std::size_t feedback_steps = 100;
  double feedback_lr = 2e-2;

  static PlantedConfig defaults();
};

struct PhaseMetrics {
  std::size_t samples = 0;
  double pass1_flag_rate = 0.0;  // share of pass-1 outputs above tau
  double hallucination_rate = 0.0;
  double kl_drift = 0.0;
};

struct PlantedResult {
  double detector_accuracy = 0.0;  // on the detector's own training set
  PhaseMetrics fresh;              // fresh adapters
  PhaseMetrics before;             // after bias injection
  PhaseMetrics after;              // after the feedback steps
  std::size_t updates = 0;
  std::vector<nlohmann::json> correction_trace;
  std::vector<pipeline::RunRecord> before_records;
  std::vector<pipeline::RunRecord> after_records;
};

PhaseMetrics summarize(const std::vector<pipeline::RunRecord>& records);

PlantedResult run_planted_task(const PlantedConfig& config);

}  // namespace autorag::planted
