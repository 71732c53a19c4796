#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <vector>

#include "pyramid/config.hpp"
#include "pyramid/trainer.hpp"
#include "pyramid/verification.hpp"

namespace pyramid {

/// Trace CSV with columns iteration,mean_loss,val_auc. Cells of iterations
/// without a validation pass are left empty.
void write_trace_csv(std::ostream& out, const LevelTrace& trace);

/// Writes <output_dir>/dataset/{images/*.pgm,index.csv}. Returns the index path.
std::filesystem::path cmd_synth(const RunConfig& cfg, std::ostream& log);

struct TrainOutputs {
    std::filesystem::path model;
    std::filesystem::path train_index;
    std::filesystem::path eval_index;
    std::vector<std::filesystem::path> traces;
};

/// Splits the configured index by identity, trains one pyramid (single_top)
/// or one per landmark (landmark) and writes the model and trace files.
/// Every input check runs before the first training step.
TrainOutputs cmd_train(const RunConfig& cfg, std::ostream& log);

/// Writes <output_dir>/features.csv with one row per index record.
std::filesystem::path cmd_extract(const RunConfig& cfg, const std::filesystem::path& model_path,
                                  const std::filesystem::path& index_path, std::ostream& log);

/// Scores the configured pairs of the index and writes <output_dir>/report.csv.
std::filesystem::path cmd_eval(const RunConfig& cfg, const std::filesystem::path& features_path,
                               const std::filesystem::path& index_path, std::ostream& log);

/// Report computed exactly as cmd_eval does, without touching the disk.
VerificationReport evaluate_features(const RunConfig& cfg,
                                     const std::map<std::string, std::vector<double>>& features,
                                     const DatasetIndex& index);

}  // namespace pyramid
