#include "roadsynth/io.hpp"

#include "roadsynth/binary_io.hpp"
#include "roadsynth/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace roadsynth {

using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, path.string());
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    return out;
}

template <typename F>
auto with_path(const fs::path& path, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::FormatError) throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
        throw;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in = open_in(path);
    std::vector<json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::FormatError, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::ofstream out = open_out(path);
    for (const auto& r : rows) out << r.dump() << '\n';
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::FormatError, "expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json pose_json(const RigidTransform& t) {
    json a = json::array();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (r == 3) a.push_back(c == 3 ? 1.0 : 0.0);
            else if (c == 3) a.push_back(t.translation()[r]);
            else a.push_back(t.rotation()(r, c));
        }
    }
    return a;
}

RigidTransform pose_from(const json& j) {
    if (!j.is_array() || j.size() != 16) throw Error(ErrorCode::FormatError, "pose must have 16 entries");
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 3; ++c) r(i, c) = j[4 * i + c].get<double>();
        t[i] = j[4 * i + 3].get<double>();
    }
    return {r, t};
}

json box_json(const TrackedBox& b) {
    return {{"track_id", b.track_id},
            {"type", b.type},
            {"center", vec_json(b.box.center)},
            {"size", vec_json(b.box.size)},
            {"yaw", b.box.yaw}};
}

TrackedBox box_from(const json& j) {
    TrackedBox b;
    b.track_id = j.value("track_id", TrackId{0});
    b.type = j.value("type", std::string("car"));
    b.box.center = vec_from(j.at("center"));
    b.box.size = vec_from(j.at("size"));
    b.box.yaw = j.at("yaw").get<double>();
    return b;
}

fs::path frame_path(const fs::path& dir, const char* sub, std::int64_t frame_id) {
    return dir / sub / frame_file_name(frame_id);
}

void write_i64s(const fs::path& path, const std::vector<TrackId>& v) {
    std::ofstream out = open_out(path);
    for (const auto x : v) binio::put_u64(out, static_cast<std::uint64_t>(x));
}

std::vector<TrackId> read_i64s(const fs::path& path) {
    return with_path(path, [&] {
        std::ifstream in = open_in(path);
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(in.tellg());
        in.seekg(0);
        if (bytes % 8 != 0) throw Error(ErrorCode::FormatError, "size " + std::to_string(bytes) + " is not a multiple of 8");
        std::vector<TrackId> v(bytes / 8);
        for (auto& x : v) x = static_cast<TrackId>(binio::get_u64(in, "label"));
        return v;
    });
}

void write_bitmap(const fs::path& path, const std::vector<std::uint8_t>& bits) {
    std::ofstream out = open_out(path);
    binio::put_u64(out, bits.size());
    std::vector<char> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
    }
    out.write(packed.data(), static_cast<std::streamsize>(packed.size()));
}

std::vector<std::uint8_t> read_bitmap(const fs::path& path) {
    return with_path(path, [&] {
        std::ifstream in = open_in(path);
        const std::uint64_t n = binio::get_u64(in, "ray count");
        std::vector<char> packed((n + 7) / 8);
        if (!in.read(packed.data(), static_cast<std::streamsize>(packed.size()))) {
            throw Error(ErrorCode::FormatError, "bitmap shorter than " + std::to_string(n) + " bits at offset 8");
        }
        std::vector<std::uint8_t> bits(n);
        for (std::size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1;
        return bits;
    });
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error(ErrorCode::MissingFile, "cannot create " + p.string() + ": " + ec.message());
}

} // namespace

std::string frame_file_name(std::int64_t frame_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06lld.bin", static_cast<long long>(frame_id));
    return buf;
}

std::vector<Vec3> snap_points(const std::vector<Vec3>& points) {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(round_to_float(p));
    return out;
}

std::vector<Vec3> read_points(const fs::path& path) {
    std::ifstream in = open_in(path);
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (bytes % 16 != 0) {
        throw Error(ErrorCode::FormatError, path.string() + ": size " + std::to_string(bytes) +
                                                " is not a multiple of 16 (truncated at offset " +
                                                std::to_string(bytes - bytes % 16) + ")");
    }
    return with_path(path, [&] {
        std::vector<Vec3> pts(bytes / 16);
        for (auto& p : pts) {
            p.x() = binio::get_f32(in, "x");
            p.y() = binio::get_f32(in, "y");
            p.z() = binio::get_f32(in, "z");
            binio::get_f32(in, "intensity");
        }
        return pts;
    });
}

void write_points(const fs::path& path, const std::vector<Vec3>& points) {
    std::ofstream out = open_out(path);
    for (const auto& p : points) {
        binio::put_f32(out, static_cast<float>(p.x()));
        binio::put_f32(out, static_cast<float>(p.y()));
        binio::put_f32(out, static_cast<float>(p.z()));
        binio::put_f32(out, 0.0f);
    }
}

Fragment read_fragment(const fs::path& dir) {
    Fragment frag;
    frag.name = dir.filename().string();
    const fs::path poses = dir / "poses.jsonl";
    const fs::path labels = dir / "labels.jsonl";
    with_path(poses, [&] {
        for (const auto& row : read_jsonl(poses)) {
            Frame f;
            f.frame_id = row.at("frame_id").get<std::int64_t>();
            f.timestamp = row.value("timestamp", 0.0);
            f.sensor_pose = pose_from(row.at("pose"));
            frag.frames.push_back(std::move(f));
        }
        return 0;
    });
    std::map<std::int64_t, std::size_t> index;
    for (std::size_t i = 0; i < frag.frames.size(); ++i) {
        if (!index.emplace(frag.frames[i].frame_id, i).second) {
            throw Error(ErrorCode::FormatError, poses.string() + ": duplicate frame_id " +
                                                    std::to_string(frag.frames[i].frame_id));
        }
    }
    with_path(labels, [&] {
        for (const auto& row : read_jsonl(labels)) {
            const auto id = row.at("frame_id").get<std::int64_t>();
            const auto it = index.find(id);
            if (it == index.end()) throw Error(ErrorCode::FormatError, "labels for unknown frame " + std::to_string(id));
            for (const auto& o : row.at("objects")) frag.frames[it->second].boxes.push_back(box_from(o));
        }
        return 0;
    });
    const fs::path pseudo = dir / "pseudo_labels.jsonl";
    if (fs::exists(pseudo)) {
        with_path(pseudo, [&] {
            for (const auto& row : read_jsonl(pseudo)) {
                auto& list = frag.pseudo_boxes[row.at("frame_id").get<std::int64_t>()];
                for (const auto& o : row.at("objects")) list.push_back(box_from(o).box);
            }
            return 0;
        });
    }
    for (auto& f : frag.frames) f.points = read_points(frame_path(dir, "frames", f.frame_id));
    return frag;
}

void write_fragment(const fs::path& dir, const Fragment& fragment) {
    ensure_dir(dir / "frames");
    std::vector<json> poses;
    std::vector<json> labels;
    for (const auto& f : fragment.frames) {
        write_points(frame_path(dir, "frames", f.frame_id), f.points);
        poses.push_back({{"frame_id", f.frame_id}, {"timestamp", f.timestamp}, {"pose", pose_json(f.sensor_pose)}});
        json objects = json::array();
        for (const auto& b : f.boxes) objects.push_back(box_json(b));
        labels.push_back({{"frame_id", f.frame_id}, {"objects", objects}});
    }
    write_jsonl(dir / "poses.jsonl", poses);
    write_jsonl(dir / "labels.jsonl", labels);
    if (!fragment.pseudo_boxes.empty()) {
        std::vector<json> rows;
        for (const auto& [id, boxes] : fragment.pseudo_boxes) {
            json objects = json::array();
            for (const auto& b : boxes) objects.push_back(box_json({-1, "unknown", b}));
            rows.push_back({{"frame_id", id}, {"objects", objects}});
        }
        write_jsonl(dir / "pseudo_labels.jsonl", rows);
    }
}

std::vector<Fragment> read_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw Error(ErrorCode::MissingFile, root.string() + ": no fragment directories");
    std::vector<Fragment> out;
    for (const auto& d : dirs) out.push_back(read_fragment(d));
    return out;
}

void write_dataset(const fs::path& root, const std::vector<Fragment>& fragments) {
    for (const auto& f : fragments) write_fragment(root / f.name, f);
}

std::map<TrackId, std::vector<Vec3>> read_completed_clouds(const fs::path& fragment_dir) {
    std::map<TrackId, std::vector<Vec3>> out;
    const fs::path dir = fragment_dir / "completed";
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".bin") continue;
        const std::string stem = e.path().stem().string();
        TrackId id = 0;
        try {
            std::size_t used = 0;
            id = std::stoll(stem, &used);
            if (used != stem.size()) throw std::invalid_argument(stem);
        } catch (const std::exception&) {
            throw Error(ErrorCode::FormatError, e.path().string() + ": file name is not a track id");
        }
        out[id] = read_points(e.path());
    }
    return out;
}

void write_rays(const fs::path& path, const std::vector<RaySample>& rays) {
    std::ofstream out = open_out(path);
    binio::put_magic(out, "RRAY");
    binio::put_u32(out, 1);
    binio::put_u64(out, rays.size());
    for (const auto& r : rays) {
        for (int i = 0; i < 3; ++i) binio::put_f64(out, r.origin[i]);
        for (int i = 0; i < 3; ++i) binio::put_f64(out, r.direction[i]);
        binio::put_f64(out, r.range.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
}

std::vector<RaySample> read_rays(const fs::path& path) {
    std::ifstream in = open_in(path);
    return with_path(path, [&] {
        binio::expect_magic(in, "RRAY");
        const auto version = binio::get_u32(in, "version");
        if (version != 1) throw Error(ErrorCode::FormatError, "unsupported ray file version " + std::to_string(version));
        const auto n = binio::get_u64(in, "count");
        std::vector<RaySample> rays;
        rays.reserve(std::min<std::uint64_t>(n, 1u << 24));
        for (std::uint64_t k = 0; k < n; ++k) {
            RaySample r;
            for (int i = 0; i < 3; ++i) r.origin[i] = binio::get_f64(in, "origin");
            for (int i = 0; i < 3; ++i) r.direction[i] = binio::get_f64(in, "direction");
            const double range = binio::get_f64(in, "range");
            if (!std::isnan(range)) r.range = range;
            rays.push_back(r);
        }
        return rays;
    });
}

void write_rendered(const fs::path& dir, const SensorModel& sensor, const std::vector<RenderedFrame>& frames) {
    for (const char* sub : {"frames", "point_labels", "drops"}) ensure_dir(dir / sub);
    std::vector<json> labels;
    std::vector<json> poses;
    for (const auto& f : frames) {
        write_points(frame_path(dir, "frames", f.frame_id), f.points);
        write_i64s(frame_path(dir, "point_labels", f.frame_id), f.labels);
        write_bitmap(frame_path(dir, "drops", f.frame_id), f.dropped);
        json objects = json::array();
        for (std::size_t b = 0; b < f.boxes.size(); ++b) {
            json o = box_json(f.boxes[b]);
            if (b < f.box_rotations.size()) {
                json r = json::array();
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) r.push_back(f.box_rotations[b](i, j));
                o["rotation"] = r;
            }
            objects.push_back(o);
        }
        labels.push_back({{"frame_id", f.frame_id}, {"objects", objects}});
        poses.push_back({{"frame_id", f.frame_id}, {"pose", pose_json(sensor.pose)}});
    }
    write_jsonl(dir / "labels.jsonl", labels);
    write_jsonl(dir / "poses.jsonl", poses);
}

std::vector<RenderedFrame> read_rendered(const fs::path& dir) {
    std::vector<RenderedFrame> frames;
    const fs::path labels = dir / "labels.jsonl";
    with_path(labels, [&] {
        for (const auto& row : read_jsonl(labels)) {
            RenderedFrame f;
            f.frame_id = row.at("frame_id").get<std::int64_t>();
            for (const auto& o : row.at("objects")) {
                f.boxes.push_back(box_from(o));
                if (o.contains("rotation")) {
                    const auto& r = o.at("rotation");
                    if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::FormatError, "rotation must have 9 entries");
                    Mat3 m;
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) m(i, j) = r[3 * i + j].get<double>();
                    f.box_rotations.push_back(m);
                }
            }
            frames.push_back(std::move(f));
        }
        return 0;
    });
    for (auto& f : frames) {
        f.points = read_points(frame_path(dir, "frames", f.frame_id));
        f.labels = read_i64s(frame_path(dir, "point_labels", f.frame_id));
        f.dropped = read_bitmap(frame_path(dir, "drops", f.frame_id));
        for (std::size_t i = 0; i < f.dropped.size(); ++i) {
            if (!f.dropped[i]) f.ray_index.push_back(static_cast<std::uint32_t>(i));
        }
        if (f.labels.size() != f.points.size() || f.ray_index.size() != f.points.size()) {
            throw Error(ErrorCode::FormatError, dir.string() + ": frame " + std::to_string(f.frame_id) +
                                                    " has inconsistent point, label and drop counts");
        }
    }
    return frames;
}

} // namespace roadsynth
