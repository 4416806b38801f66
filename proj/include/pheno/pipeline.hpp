#pragma once

#include <string>

#include "pheno/config.hpp"

namespace pheno {

// Pipeline stages. Each one reads the previous stage's files from the
// configured locations and writes its own under out_dir; all writes are
// atomic (temp file + rename).
void run_synth(const PipelineConfig& cfg);
void run_preprocess(const PipelineConfig& cfg);
void run_features(const PipelineConfig& cfg);
void run_train(const PipelineConfig& cfg);
void run_evaluate(const PipelineConfig& cfg);
void run_report(const PipelineConfig& cfg);

// Dispatch by stage name; "all" runs the full chain in order.
void run_stage(const std::string& stage, const PipelineConfig& cfg);

} // namespace pheno
