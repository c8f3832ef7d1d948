#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "vc4d/errors.hpp"

namespace vc4d {

// One time step of a temporally coherent mesh sequence: per-frame vertex
// positions over a face list that is identical for every frame.
struct MeshFrame {
    std::vector<float> vertices;            // x0,y0,z0, x1,y1,z1, ...
    std::vector<std::uint32_t> faces;       // triangles, 0-based, 3 per face
    int frame_index = 0;

    std::size_t vertex_count() const { return vertices.size() / 3; }
    std::size_t face_count() const { return faces.size() / 3; }
};

struct TextureFrame {
    int width = 0;
    int height = 0;
    static constexpr int channels = 3;
    std::vector<float> pixels;              // row-major, top-left origin, RGB
    float range_lo = 0.0f;
    float range_hi = 255.0f;
    int frame_index = 0;

    std::size_t pixel_value_count() const {
        return static_cast<std::size_t>(width) * height * channels;
    }
};

struct ManifestRow {
    std::string mesh_path;
    std::string texture_path;               // empty when the sequence has no textures
    std::string label;
    int frame_index = 0;
};

struct SequenceManifest {
    std::vector<ManifestRow> rows;          // sorted by (label, frame_index)
    std::vector<std::string> label_set;     // first-appearance order

    bool has_textures() const {
        return !rows.empty() && !rows.front().texture_path.empty();
    }
    int label_id(const std::string& label) const {
        for (std::size_t i = 0; i < label_set.size(); ++i)
            if (label_set[i] == label) return static_cast<int>(i);
        throw ManifestError("unknown label: " + label);
    }
};

struct ObjStats {
    int ignored_records = 0;                // vt/vn/materials and other skipped lines
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == sep) {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

inline bool parse_float(std::string_view token, float& out) {
    const char* first = token.data();
    const char* last = first + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && std::isfinite(out);
}

inline bool parse_int(std::string_view token, long& out) {
    const char* first = token.data();
    const char* last = first + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

// Visit lines with 1-based line numbers, accepting both \n and \r\n endings.
template <typename Fn>
inline void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (start < text.size() || !line.empty()) fn(line_no, line);
        if (end == text.size()) break;
        start = end + 1;
    }
}

}  // namespace detail

// Wavefront OBJ subset: `v x y z` and triangular `f a b c` records. Indices in
// the file are 1-based; everything else is skipped and counted. Face indices
// are validated after the whole file is read so forward references parse.
inline MeshFrame parse_obj(std::string_view text, ObjStats* stats = nullptr) {
    MeshFrame frame;
    ObjStats local;
    detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        auto tokens = detail::split_ws(line);
        if (tokens.empty() || tokens[0].front() == '#') return;
        if (tokens[0] == "v") {
            if (tokens.size() != 4)
                throw ParseError("line " + std::to_string(line_no) +
                                 ": vertex record needs exactly 3 coordinates");
            for (int c = 1; c <= 3; ++c) {
                float value;
                if (!detail::parse_float(tokens[static_cast<std::size_t>(c)], value))
                    throw ParseError("line " + std::to_string(line_no) +
                                     ": non-numeric coordinate '" +
                                     std::string(tokens[static_cast<std::size_t>(c)]) + "'");
                frame.vertices.push_back(value);
            }
        } else if (tokens[0] == "f") {
            if (tokens.size() != 4)
                throw FaceArityError("line " + std::to_string(line_no) + ": face has " +
                                     std::to_string(tokens.size() - 1) +
                                     " vertices, only triangles are supported");
            for (int c = 1; c <= 3; ++c) {
                std::string_view ref = tokens[static_cast<std::size_t>(c)];
                // OBJ face entries may carry /texture/normal parts; the vertex
                // index is the part before the first slash.
                if (auto slash = ref.find('/'); slash != std::string_view::npos)
                    ref = ref.substr(0, slash);
                long idx;
                if (!detail::parse_int(ref, idx))
                    throw ParseError("line " + std::to_string(line_no) +
                                     ": non-numeric face index '" + std::string(ref) + "'");
                if (idx < 1)
                    throw IndexError("line " + std::to_string(line_no) +
                                     ": face index " + std::to_string(idx) +
                                     " out of range (indices are 1-based)");
                frame.faces.push_back(static_cast<std::uint32_t>(idx - 1));
            }
        } else {
            ++local.ignored_records;
        }
    });
    if (frame.vertices.empty()) throw ParseError("no vertices in OBJ input");
    const std::uint32_t n = static_cast<std::uint32_t>(frame.vertex_count());
    for (std::uint32_t idx : frame.faces)
        if (idx >= n)
            throw IndexError("face index " + std::to_string(idx + 1) +
                             " out of range, mesh has " + std::to_string(n) + " vertices");
    if (stats) *stats = local;
    return frame;
}

// Writes vertices with 9 significant digits, which round-trips binary32
// coordinates exactly through parse_obj.
inline std::string write_obj(const MeshFrame& frame) {
    std::string out;
    out.reserve(frame.vertices.size() * 12 + frame.faces.size() * 8);
    char buf[96];
    for (std::size_t v = 0; v < frame.vertex_count(); ++v) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n",
                      static_cast<double>(frame.vertices[3 * v]),
                      static_cast<double>(frame.vertices[3 * v + 1]),
                      static_cast<double>(frame.vertices[3 * v + 2]));
        out += buf;
    }
    for (std::size_t f = 0; f < frame.face_count(); ++f) {
        std::snprintf(buf, sizeof(buf), "f %u %u %u\n", frame.faces[3 * f] + 1,
                      frame.faces[3 * f + 1] + 1, frame.faces[3 * f + 2] + 1);
        out += buf;
    }
    return out;
}

// Binary PPM (P6), maxval 255. Pixels come back as floats in [0, 255].
inline TextureFrame load_texture_ppm(std::string_view bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])))
                ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
    };
    auto read_int = [&]() -> long {
        skip_space();
        std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
            ++pos;
        long value;
        if (pos == start || !detail::parse_int(bytes.substr(start, pos - start), value))
            throw FormatError("PPM: expected integer in header");
        return value;
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw FormatError("PPM: magic is not P6");
    pos = 2;
    const long width = read_int();
    const long height = read_int();
    const long maxval = read_int();
    if (width <= 0 || height <= 0) throw FormatError("PPM: non-positive dimensions");
    if (maxval != 255) throw FormatError("PPM: maxval must be 255, got " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("PPM: missing whitespace after header");
    ++pos;

    const std::size_t payload = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - pos < payload)
        throw FormatError("PPM: payload truncated, need " + std::to_string(payload) +
                          " bytes, have " + std::to_string(bytes.size() - pos));

    TextureFrame frame;
    frame.width = static_cast<int>(width);
    frame.height = static_cast<int>(height);
    frame.pixels.resize(payload);
    for (std::size_t i = 0; i < payload; ++i)
        frame.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i]));
    return frame;
}

inline std::string write_texture_ppm(const TextureFrame& frame) {
    std::string out = "P6\n" + std::to_string(frame.width) + " " +
                      std::to_string(frame.height) + "\n255\n";
    out.reserve(out.size() + frame.pixels.size());
    const float lo = frame.range_lo, hi = frame.range_hi;
    const float scale = hi > lo ? 255.0f / (hi - lo) : 1.0f;
    for (float v : frame.pixels) {
        float mapped = (v - lo) * scale;
        mapped = std::clamp(mapped, 0.0f, 255.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(mapped))));
    }
    return out;
}

// Manifest CSV with header `mesh,texture,label,frame`; comma-separated, no
// quoting. Rows come back sorted by (label, frame_index); the label set keeps
// first-appearance order of the file.
inline SequenceManifest load_manifest(std::string_view text) {
    SequenceManifest manifest;
    bool saw_header = false;
    int with_texture = 0, without_texture = 0;
    detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        if (line.empty()) return;
        if (!saw_header) {
            if (line != "mesh,texture,label,frame")
                throw ManifestError("line 1: header must be 'mesh,texture,label,frame'");
            saw_header = true;
            return;
        }
        auto fields = detail::split_fields(line, ',');
        if (fields.size() != 4)
            throw ManifestError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                std::to_string(fields.size()));
        ManifestRow row;
        row.mesh_path = std::string(fields[0]);
        row.texture_path = std::string(fields[1]);
        row.label = std::string(fields[2]);
        long frame;
        if (!detail::parse_int(fields[3], frame) || frame < 0)
            throw ManifestError("line " + std::to_string(line_no) +
                                ": frame must be a non-negative integer");
        row.frame_index = static_cast<int>(frame);
        if (row.mesh_path.empty())
            throw ManifestError("line " + std::to_string(line_no) + ": empty mesh path");
        if (row.label.empty())
            throw ManifestError("line " + std::to_string(line_no) + ": empty label");
        (row.texture_path.empty() ? without_texture : with_texture)++;
        if (std::find(manifest.label_set.begin(), manifest.label_set.end(), row.label) ==
            manifest.label_set.end())
            manifest.label_set.push_back(row.label);
        manifest.rows.push_back(std::move(row));
    });
    if (!saw_header) throw ManifestError("empty manifest");
    if (with_texture > 0 && without_texture > 0)
        throw ManifestError("manifest mixes rows with and without texture paths");
    std::stable_sort(manifest.rows.begin(), manifest.rows.end(),
                     [](const ManifestRow& a, const ManifestRow& b) {
                         if (a.label != b.label) return a.label < b.label;
                         return a.frame_index < b.frame_index;
                     });
    for (std::size_t i = 1; i < manifest.rows.size(); ++i) {
        const auto& prev = manifest.rows[i - 1];
        const auto& cur = manifest.rows[i];
        if (prev.label == cur.label && prev.frame_index == cur.frame_index)
            throw ManifestError("duplicate frame " + std::to_string(cur.frame_index) +
                                " for label '" + cur.label + "'");
    }
    return manifest;
}

inline std::string write_manifest(const SequenceManifest& manifest) {
    std::string out = "mesh,texture,label,frame\n";
    for (const auto& row : manifest.rows)
        out += row.mesh_path + "," + row.texture_path + "," + row.label + "," +
               std::to_string(row.frame_index) + "\n";
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
    write_file(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

// A manifest's frames loaded into memory, mesh topology validated across the
// whole sequence.
struct LoadedSequence {
    std::vector<MeshFrame> meshes;          // manifest row order
    std::vector<TextureFrame> textures;     // empty when the manifest has none
    std::vector<int> label_ids;             // per row, into manifest.label_set
    SequenceManifest manifest;
};

inline LoadedSequence load_sequence(const SequenceManifest& manifest,
                                    const std::filesystem::path& base_dir) {
    LoadedSequence seq;
    seq.manifest = manifest;
    seq.meshes.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        MeshFrame mesh = parse_obj(read_file(base_dir / row.mesh_path));
        mesh.frame_index = row.frame_index;
        if (!seq.meshes.empty()) {
            const MeshFrame& first = seq.meshes.front();
            if (mesh.vertex_count() != first.vertex_count() || mesh.faces != first.faces)
                throw TopologyError("mesh " + row.mesh_path +
                                    " breaks the sequence topology (vertex count or faces differ)");
        }
        seq.meshes.push_back(std::move(mesh));
        if (!row.texture_path.empty()) {
            TextureFrame tex = load_texture_ppm(read_file(base_dir / row.texture_path));
            tex.frame_index = row.frame_index;
            if (!seq.textures.empty()) {
                const TextureFrame& first = seq.textures.front();
                if (tex.width != first.width || tex.height != first.height)
                    throw TopologyError("texture " + row.texture_path +
                                        " has different dimensions than the sequence");
            }
            seq.textures.push_back(std::move(tex));
        }
        seq.label_ids.push_back(manifest.label_id(row.label));
    }
    return seq;
}

}  // namespace vc4d
