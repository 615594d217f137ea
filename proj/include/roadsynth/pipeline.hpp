#pragma once

#include "roadsynth/config.hpp"
#include "roadsynth/metrics.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace roadsynth {

/// Stage order: decompose, complete, fit-background, fit-vehicles, occupancy,
/// render, eval.
const std::vector<std::string>& stage_names();

struct StageReport {
    std::string name;
    bool reused = false; ///< a finished artifact with the same fingerprint was kept
    std::string fingerprint;
    std::map<std::string, double> stats;
};

struct PipelineReport {
    std::vector<StageReport> stages;
    std::map<std::string, MetricsReport> metrics; ///< per sensor, when a reference is configured
};

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
    bool force = false; ///< rerun stages even when their fingerprint matches
    LogFn log;          ///< defaults to standard error
};

/// Runs every stage in order under `<output_root>/<stage>/`. Each finished
/// stage leaves a `.done` file holding a fingerprint chained from the dataset,
/// the stage's config section, the seed and the upstream fingerprints; a stage
/// whose fingerprint matches is reused. The output root is locked for the
/// duration of the run. Failures are rethrown as Error(StageFailed) naming the
/// stage and the underlying error.
PipelineReport run_pipeline(const PipelineConfig& config, const RunOptions& opt = {});

/// Runs a single stage; upstream artifacts must already be complete.
StageReport run_stage(const PipelineConfig& config, const std::string& stage, const RunOptions& opt = {});

/// Scene graph the render stage uses, assembled from the finished decompose,
/// fit and occupancy artifacts under config.output_root.
SceneGraph load_scene_graph(const PipelineConfig& config);

std::string report_to_json(const PipelineReport& report);
std::string metrics_to_json(const MetricsReport& m);

/// 64-bit FNV-1a over the sorted relative paths and contents of every regular
/// file below `root`, as 16 hex digits.
std::string tree_digest(const std::filesystem::path& root);

} // namespace roadsynth
