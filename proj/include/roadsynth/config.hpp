#pragma once

#include "roadsynth/decomp.hpp"
#include "roadsynth/loss.hpp"
#include "roadsynth/raysample.hpp"
#include "roadsynth/render.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace roadsynth {

/// A virtual sensor. The pose is built from position and yaw/pitch/roll in
/// degrees (Z-Y-X order, pitch positive nose-down) unless `pose` is given.
struct SensorConfig {
    std::string name = "roadside";
    Vec3 position{0.0, 0.0, 6.0};
    double yaw_deg = 0.0;
    double pitch_deg = 20.0;
    double roll_deg = 0.0;
    std::optional<RigidTransform> pose;
    SensorModel pattern; ///< pose ignored

    SensorModel model() const;
};

enum class CompletionMode { Aggregate, BestFrame };

struct DecomposeConfig {
    /// std::numeric_limits<std::size_t>::max() ("inf" in the file) sends every
    /// vehicle through donor substitution.
    std::size_t min_points = 50;
    double ground_band = 0.15;
    double box_margin = 0.1;
    double pseudo_margin = 0.1;
    bool align = true;
    AlignmentOptions alignment;
    CompletionMode completion = CompletionMode::Aggregate;
    double mirror_dedup = 1e-3;
};

struct BackgroundConfig {
    FitConfig fit;
    double padding = 1.2;
    std::size_t max_rays = 300000;
};

struct VehiclesConfig {
    FitConfig fit;
    RingSpec ring;
    double hit_threshold = 0.05;
    double field_margin = 0.3;
    std::size_t max_real_rays = 20000;
};

struct OccupancyConfig {
    double voxel = 0.4;
    int dilation = 2;
};

struct RenderConfig {
    std::vector<SensorConfig> sensors;
    std::vector<std::int64_t> frames; ///< empty: every frame of the dataset
    RenderOptions options;
};

struct PipelineConfig {
    std::filesystem::path dataset_root;
    std::filesystem::path output_root;
    std::uint64_t seed = 0;
    DecomposeConfig decompose;
    BackgroundConfig background;
    VehiclesConfig vehicles;
    OccupancyConfig occupancy;
    LossWeights loss_weights;
    RenderConfig render;
    std::filesystem::path reference_root; ///< optional rendered ground truth for eval

    static PipelineConfig defaults();
};

/// Serialized with every field present; keys are stable.
std::string config_to_json(const PipelineConfig& config, int indent = 2);

/// Missing keys take their defaults; unknown keys are an error.
/// Throws Error(InvalidArgument) with the offending key path.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Numeric and structural checks. When check_paths is set the dataset root
/// (and reference root, if any) must exist. Throws Error(InvalidArgument).
void validate_config(const PipelineConfig& config, bool check_paths);

/// Canonical JSON of the parts of the config a stage depends on.
std::string stage_config_json(const PipelineConfig& config, const std::string& stage);

} // namespace roadsynth
