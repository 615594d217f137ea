#pragma once

#include "roadsynth/decomp.hpp"
#include "roadsynth/loss.hpp"
#include "roadsynth/render.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace roadsynth {

namespace fs = std::filesystem;

// Point files: little-endian f32 records (x, y, z, intensity). Intensity is
// ignored on read and written as 0.
std::vector<Vec3> read_points(const fs::path& path);
void write_points(const fs::path& path, const std::vector<Vec3>& points);

/// Reads one fragment directory:
///
///     <dir>/frames/000000.bin
///     <dir>/poses.jsonl            {"frame_id", "timestamp", "pose": [16 row-major]}
///     <dir>/labels.jsonl           {"frame_id", "objects": [{"track_id", "type", "center", "size", "yaw"}]}
///     <dir>/pseudo_labels.jsonl    optional, same schema, world frame
///
/// Frames are ordered as in poses.jsonl.
Fragment read_fragment(const fs::path& dir);
void write_fragment(const fs::path& dir, const Fragment& fragment);

/// Every subdirectory of `root` is a fragment; fragments are sorted by name.
std::vector<Fragment> read_dataset(const fs::path& root);
void write_dataset(const fs::path& root, const std::vector<Fragment>& fragments);

/// Externally completed clouds, `<fragment dir>/completed/<track_id>.bin`, in
/// canonical box-local coordinates.
std::map<TrackId, std::vector<Vec3>> read_completed_clouds(const fs::path& fragment_dir);

// Ray files: "RRAY", u32 version, u64 count, then per ray origin (3 f64),
// direction (3 f64) and range (f64, NaN for a drop).
void write_rays(const fs::path& path, const std::vector<RaySample>& rays);
std::vector<RaySample> read_rays(const fs::path& path);

/// Writes rendered frames into one sensor directory:
///
///     frames/%06d.bin        points, sensor frame
///     point_labels/%06d.bin  i64 source label per point
///     drops/%06d.bin         u64 ray count, then the drop bitmap (LSB first)
///     labels.jsonl           sensor-frame boxes plus the full 3x3 "rotation"
///     poses.jsonl            sensor pose per frame
void write_rendered(const fs::path& dir, const SensorModel& sensor, const std::vector<RenderedFrame>& frames);
std::vector<RenderedFrame> read_rendered(const fs::path& dir);

/// Point coordinates rounded to the precision they are stored with.
std::vector<Vec3> snap_points(const std::vector<Vec3>& points);

std::string frame_file_name(std::int64_t frame_id);

} // namespace roadsynth
