#include "attnseg/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "attnseg/errors.hpp"
#include "attnseg/random.hpp"

namespace attnseg {

namespace {

std::string rgb_text(Rgb c) {
    return "(" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) +
           ")";
}

std::uint32_t pack(Rgb c) {
    return (std::uint32_t{c[0]} << 16) | (std::uint32_t{c[1]} << 8) | c[2];
}

bool tile_order(const TileSpec& a, const TileSpec& b) {
    return std::tie(a.image_id, a.y, a.x, a.size) < std::tie(b.image_id, b.y, b.x, b.size);
}

std::vector<int> axis_origins(int dim, int tile, int stride, EdgePolicy edge) {
    std::vector<int> origins;
    for (int o = 0; o + tile <= dim; o += stride) origins.push_back(o);
    if (edge == EdgePolicy::Clamp && dim >= tile && (origins.empty() || origins.back() + tile < dim))
        origins.push_back(dim - tile);
    return origins;
}

}  // namespace

// --- legend ----------------------------------------------------------------

ClassLegend::ClassLegend(std::vector<LegendEntry> entries) {
    const auto k = static_cast<int>(entries.size());
    std::vector<std::optional<LegendEntry>> slots(entries.size());
    std::set<std::uint32_t> colors;
    for (auto& e : entries) {
        if (e.class_id < 0 || e.class_id >= k)
            throw ConfigError("legend: class id " + std::to_string(e.class_id) +
                              " outside 0.." + std::to_string(k - 1));
        if (slots[e.class_id])
            throw ConfigError("legend: class id " + std::to_string(e.class_id) + " repeated");
        if (!colors.insert(pack(e.rgb)).second)
            throw ConfigError("legend: color " + rgb_text(e.rgb) + " used by more than one class");
        slots[e.class_id] = std::move(e);
    }
    entries_.reserve(slots.size());
    for (auto& s : slots) entries_.push_back(std::move(*s));
}

ClassLegend ClassLegend::standard() {
    return ClassLegend({{0, {0, 0, 0}, "background"},
                        {1, {255, 0, 0}, "building"},
                        {2, {0, 0, 255}, "water"},
                        {3, {255, 255, 0}, "woodland"},
                        {4, {0, 255, 0}, "road"}});
}

const LegendEntry& ClassLegend::entry(int class_id) const {
    if (class_id < 0 || class_id >= size())
        throw DataError("legend: no class " + std::to_string(class_id));
    return entries_[class_id];
}

std::optional<int> ClassLegend::find(Rgb rgb) const {
    for (const auto& e : entries_)
        if (e.rgb == rgb) return e.class_id;
    return std::nullopt;
}

LabelMap mask_encode(const RgbImage& mask, const ClassLegend& legend) {
    // Dense lookup keyed by packed color; the legend is small but masks are not.
    std::vector<std::pair<std::uint32_t, std::uint8_t>> table;
    for (const auto& e : legend.entries())
        table.emplace_back(pack(e.rgb), static_cast<std::uint8_t>(e.class_id));
    std::sort(table.begin(), table.end());

    LabelMap out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const Rgb c = mask.at(x, y);
            const std::uint32_t key = pack(c);
            auto it = std::lower_bound(table.begin(), table.end(),
                                       std::make_pair(key, std::uint8_t{0}));
            if (it == table.end() || it->first != key)
                throw DataError("mask_encode: unknown color " + rgb_text(c) + " at pixel (x=" +
                                std::to_string(x) + ", y=" + std::to_string(y) + ")");
            out.set(x, y, it->second);
        }
    return out;
}

RgbImage mask_decode(const LabelMap& labels, const ClassLegend& legend) {
    RgbImage out(labels.width, labels.height);
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) {
            const int id = labels.at(x, y);
            if (id >= legend.size())
                throw DataError("mask_decode: label " + std::to_string(id) + " at pixel (x=" +
                                std::to_string(x) + ", y=" + std::to_string(y) +
                                ") has no legend color");
            out.set(x, y, legend.entry(id).rgb);
        }
    return out;
}

// --- tiling ----------------------------------------------------------------

EdgePolicy parse_edge_policy(const std::string& text) {
    if (text == "clamp") return EdgePolicy::Clamp;
    if (text == "drop") return EdgePolicy::Drop;
    throw ConfigError("unknown edge policy '" + text + "' (expected clamp or drop)");
}

std::vector<TileSpec> tile_plan(int img_w, int img_h, int tile, int stride, EdgePolicy edge,
                                const std::string& image_id) {
    if (tile < 1) throw DataError("tile_plan: tile size must be positive");
    if (stride < 1) throw DataError("tile_plan: stride must be >= 1");
    if (edge == EdgePolicy::Clamp && (tile > img_w || tile > img_h))
        throw DataError("tile_plan: tile " + std::to_string(tile) + " exceeds image " +
                        std::to_string(img_w) + "x" + std::to_string(img_h) +
                        (image_id.empty() ? "" : " ('" + image_id + "')") +
                        " under the clamp edge policy");
    std::vector<TileSpec> plan;
    for (int y : axis_origins(img_h, tile, stride, edge))
        for (int x : axis_origins(img_w, tile, stride, edge)) plan.push_back({image_id, x, y, tile});
    std::sort(plan.begin(), plan.end(), tile_order);
    plan.erase(std::unique(plan.begin(), plan.end()), plan.end());
    return plan;
}

namespace {

void check_tile_bounds(int width, int height, const TileSpec& spec) {
    if (spec.size < 1 || spec.x < 0 || spec.y < 0 || spec.x + spec.size > width ||
        spec.y + spec.size > height)
        throw DataError("extract_tile: tile at (" + std::to_string(spec.x) + ", " +
                        std::to_string(spec.y) + ") size " + std::to_string(spec.size) +
                        " lies outside the " + std::to_string(width) + "x" +
                        std::to_string(height) + " source '" + spec.image_id + "'");
}

}  // namespace

RgbImage extract_tile(const RgbImage& image, const TileSpec& spec) {
    check_tile_bounds(image.width, image.height, spec);
    RgbImage out(spec.size, spec.size);
    const std::size_t row_bytes = static_cast<std::size_t>(spec.size) * 3;
    for (int y = 0; y < spec.size; ++y) {
        const auto src = (static_cast<std::size_t>(spec.y + y) * image.width + spec.x) * 3;
        std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(src), row_bytes,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
    }
    return out;
}

LabelMap extract_tile(const LabelMap& labels, const TileSpec& spec) {
    check_tile_bounds(labels.width, labels.height, spec);
    LabelMap out(spec.size, spec.size);
    for (int y = 0; y < spec.size; ++y) {
        const auto src = static_cast<std::size_t>(spec.y + y) * labels.width + spec.x;
        std::copy_n(labels.labels.begin() + static_cast<std::ptrdiff_t>(src), spec.size,
                    out.labels.begin() + static_cast<std::ptrdiff_t>(y) * spec.size);
    }
    return out;
}

// --- splitting -------------------------------------------------------------

SplitManifest split_dataset(const std::vector<TileSpec>& tiles, std::uint64_t seed,
                            const std::string& holdout_image_id, int test_parts,
                            int total_parts) {
    if (test_parts < 0 || total_parts < 1 || test_parts > total_parts)
        throw ConfigError("split_dataset: invalid ratio " + std::to_string(test_parts) + "/" +
                          std::to_string(total_parts));
    SplitManifest m;
    m.seed = seed;
    m.holdout_image_id = holdout_image_id;

    std::vector<TileSpec> pool;
    for (const auto& t : tiles) {
        if (!holdout_image_id.empty() && t.image_id == holdout_image_id) m.holdout.push_back(t);
        else pool.push_back(t);
    }
    if (!holdout_image_id.empty() && m.holdout.empty())
        throw DataError("split_dataset: holdout image '" + holdout_image_id +
                        "' is not among the tile sources");

    SplitMix64 rng(seed);
    deterministic_shuffle(pool, rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(static_cast<double>(pool.size()) * test_parts / total_parts));
    m.test.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
    m.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_test), pool.end());
    std::sort(m.train.begin(), m.train.end(), tile_order);
    std::sort(m.test.begin(), m.test.end(), tile_order);
    std::sort(m.holdout.begin(), m.holdout.end(), tile_order);
    return m;
}

// --- manifest text ---------------------------------------------------------

std::string format_manifest(const SplitManifest& manifest) {
    std::ostringstream out;
    out << "# attnseg-manifest v1 seed=" << manifest.seed
        << " holdout=" << manifest.holdout_image_id << "\n";
    auto emit = [&](const char* split, const std::vector<TileSpec>& tiles) {
        for (const auto& t : tiles)
            out << split << '\t' << t.image_id << '\t' << t.x << '\t' << t.y << '\t' << t.size
                << '\n';
    };
    emit("train", manifest.train);
    emit("test", manifest.test);
    emit("holdout", manifest.holdout);
    return out.str();
}

SplitManifest parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest: empty file");
    const std::string prefix = "# attnseg-manifest v1 seed=";
    if (line.rfind(prefix, 0) != 0)
        throw DataError("manifest: missing header '# attnseg-manifest v1 ...'");
    SplitManifest m;
    const auto holdout_pos = line.find(" holdout=");
    if (holdout_pos == std::string::npos) throw DataError("manifest: header lacks holdout=");
    try {
        m.seed = std::stoull(line.substr(prefix.size(), holdout_pos - prefix.size()));
    } catch (const std::exception&) {
        throw DataError("manifest: malformed seed in header");
    }
    m.holdout_image_id = line.substr(holdout_pos + 9);

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string split;
        TileSpec t;
        std::string x, y, size;
        if (!std::getline(fields, split, '\t') || !std::getline(fields, t.image_id, '\t') ||
            !std::getline(fields, x, '\t') || !std::getline(fields, y, '\t') ||
            !std::getline(fields, size, '\t'))
            throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
        try {
            t.x = std::stoi(x);
            t.y = std::stoi(y);
            t.size = std::stoi(size);
        } catch (const std::exception&) {
            throw DataError("manifest line " + std::to_string(line_no) + ": non-numeric field");
        }
        if (split == "train") m.train.push_back(t);
        else if (split == "test") m.test.push_back(t);
        else if (split == "holdout") m.holdout.push_back(t);
        else
            throw DataError("manifest line " + std::to_string(line_no) + ": unknown split '" +
                            split + "'");
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << format_manifest(manifest);
}

SplitManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError("manifest not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

std::string tile_name(const TileSpec& spec) {
    return spec.image_id + "_" + std::to_string(spec.x) + "_" + std::to_string(spec.y);
}

}  // namespace attnseg
