#include "disent/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "disent/errors.hpp"
#include "disent/image_io.hpp"

namespace disent {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// AttributeSchema
// ---------------------------------------------------------------------------

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes) : attributes_(std::move(attributes)) {
    for (auto& a : attributes_) {
        if (a.values.empty()) {
            for (int64_t k = 0; k < a.class_count; ++k) a.values.push_back(std::to_string(k));
        }
        a.class_count = static_cast<int64_t>(a.values.size());
    }
}

std::vector<int64_t> AttributeSchema::class_counts() const {
    std::vector<int64_t> out;
    out.reserve(attributes_.size());
    for (const auto& a : attributes_) out.push_back(a.class_count);
    return out;
}

std::optional<int64_t> AttributeSchema::find(const std::string& name) const {
    for (size_t i = 0; i < attributes_.size(); ++i) {
        if (attributes_[i].name == name) return static_cast<int64_t>(i);
    }
    return std::nullopt;
}

int64_t AttributeSchema::index_of(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ContractError("unknown attribute '" + name + "'");
    return *i;
}

void AttributeSchema::validate() const {
    if (attributes_.empty()) throw ConfigError("schema must contain at least one attribute");
    std::unordered_set<std::string> seen;
    for (const auto& a : attributes_) {
        if (a.class_count < 2) {
            throw ConfigError("attribute '" + a.name + "' has " + std::to_string(a.class_count) +
                              " classes; at least 2 are required");
        }
        if (!seen.insert(a.name).second) throw ConfigError("duplicate attribute name '" + a.name + "'");
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset::Dataset(AttributeSchema schema, torch::Tensor images, torch::Tensor labels, std::string provenance)
    : schema_(std::move(schema)), images_(std::move(images)), labels_(std::move(labels)),
      provenance_(std::move(provenance)) {
    if (images_.dim() != 4 || images_.size(1) != 3) throw ShapeError("dataset images must be (N, 3, H, W)");
    if (labels_.dim() != 2 || labels_.size(0) != images_.size(0) || labels_.size(1) != schema_.size()) {
        throw ShapeError("dataset labels must be (N, M) with M = schema size");
    }
    images_ = images_.to(torch::kFloat32).contiguous();
    labels_ = labels_.to(torch::kInt64).contiguous();
    auto acc = labels_.accessor<int64_t, 2>();
    for (int64_t i = 0; i < labels_.size(0); ++i) {
        for (int64_t m = 0; m < labels_.size(1); ++m) {
            if (acc[i][m] < 0 || acc[i][m] >= schema_.at(m).class_count) {
                throw ContractError("item " + std::to_string(i) + " has label " + std::to_string(acc[i][m]) +
                                    " outside attribute '" + schema_.at(m).name + "'");
            }
        }
    }
}

LabeledImage Dataset::item(int64_t i) const {
    LabeledImage out;
    out.pixels = images_[i];
    auto row = labels_[i];
    out.labels.assign(row.data_ptr<int64_t>(), row.data_ptr<int64_t>() + row.numel());
    return out;
}

std::vector<std::vector<int64_t>> Dataset::label_marginals() const {
    std::vector<std::vector<int64_t>> out;
    for (int64_t m = 0; m < schema_.size(); ++m) {
        out.emplace_back(static_cast<size_t>(schema_.at(m).class_count), 0);
    }
    if (empty()) return out;
    auto acc = labels_.accessor<int64_t, 2>();
    for (int64_t i = 0; i < size(); ++i) {
        for (int64_t m = 0; m < schema_.size(); ++m) ++out[m][acc[i][m]];
    }
    return out;
}

Dataset Dataset::subset(const std::vector<int64_t>& indices) const {
    auto idx = torch::tensor(indices, torch::kInt64);
    if (indices.empty()) {
        return Dataset(schema_, images_.narrow(0, 0, 0), labels_.narrow(0, 0, 0), provenance_);
    }
    return Dataset(schema_, images_.index_select(0, idx), labels_.index_select(0, idx), provenance_);
}

Dataset Dataset::select_attributes(const std::vector<std::string>& names) const {
    std::vector<Attribute> attrs;
    std::vector<int64_t> cols;
    for (const auto& n : names) {
        auto i = schema_.index_of(n);
        attrs.push_back(schema_.at(i));
        cols.push_back(i);
    }
    auto labels = labels_.index_select(1, torch::tensor(cols, torch::kInt64));
    return Dataset(AttributeSchema(std::move(attrs)), images_, labels, provenance_);
}

std::vector<int64_t> Dataset::indices_with_label(int64_t attribute, int64_t value) const {
    std::vector<int64_t> out;
    if (empty()) return out;
    auto acc = labels_.accessor<int64_t, 2>();
    for (int64_t i = 0; i < size(); ++i) {
        if (acc[i][attribute] == value) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<const char*, 8> kShapeNames = {"circle",  "square",   "triangle", "pentagon",
                                                    "hexagon", "heptagon", "octagon",  "nonagon"};
constexpr std::array<int, 8> kShapeSides = {0, 4, 3, 5, 6, 7, 8, 9};
constexpr double kBackground = 0.15;
constexpr int kSuperSample = 4;

std::array<double, 3> hsv_to_rgb(double h_deg, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h_deg, 360.0) / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    switch (static_cast<int>(hp)) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    const double mval = v - c;
    for (auto& ch : rgb) ch += mval;
    return rgb;
}

struct ShapeGeometry {
    int sides;  // 0 = circle
    double cx, cy, radius;

    bool contains(double px, double py) const {
        const double dx = px - cx, dy = py - cy;
        if (sides == 0) return dx * dx + dy * dy <= radius * radius;
        // Regular polygon; squares sit axis-aligned and triangles point up.
        const double start = sides == 4 ? std::numbers::pi / 4 : -std::numbers::pi / 2;
        const double apothem = radius * std::cos(std::numbers::pi / sides);
        for (int i = 0; i < sides; ++i) {
            const double a = start + (2.0 * i + 1.0) * std::numbers::pi / sides;
            if (dx * std::cos(a) + dy * std::sin(a) > apothem) return false;
        }
        return true;
    }
};

int64_t uniform_offset(std::mt19937_64& rng, int64_t jitter) {
    if (jitter == 0) return 0;
    return static_cast<int64_t>(rng() % static_cast<uint64_t>(2 * jitter + 1)) - jitter;
}

}  // namespace

void SyntheticConfig::validate() const {
    std::vector<std::string> problems;
    if (image_size != 32 && image_size != 64 && image_size != 128) {
        problems.push_back("image_size must be one of 32, 64, 128 (got " + std::to_string(image_size) + ")");
    }
    if (shape_classes < 2 || shape_classes > static_cast<int64_t>(kShapeNames.size())) {
        problems.push_back("shape_classes must be in [2, 8] (got " + std::to_string(shape_classes) + ")");
    }
    if (hue_classes < 2 || hue_classes > 36) {
        problems.push_back("hue_classes must be in [2, 36] (got " + std::to_string(hue_classes) + ")");
    }
    if (brightness_classes < 1 || brightness_classes > 8) {
        problems.push_back("brightness_classes must be in [1, 8] (got " + std::to_string(brightness_classes) + ")");
    }
    if (jitter < 0 || jitter > image_size / 8) {
        problems.push_back("jitter must be in [0, image_size/8] (got " + std::to_string(jitter) + ")");
    }
    if (count_per_combination < 1) problems.push_back("count_per_combination must be >= 1");
    if (!problems.empty()) {
        std::string msg = "invalid synthetic config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
}

Dataset generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    const int64_t S = config.image_size;
    const bool with_brightness = config.brightness_classes > 1;
    const int64_t n = config.shape_classes * config.hue_classes * config.brightness_classes *
                      config.count_per_combination;

    std::vector<Attribute> attrs;
    Attribute shape{"shape", config.shape_classes, {}};
    for (int64_t s = 0; s < config.shape_classes; ++s) shape.values.emplace_back(kShapeNames[s]);
    Attribute hue{"hue", config.hue_classes, {}};
    for (int64_t h = 0; h < config.hue_classes; ++h) hue.values.push_back("hue" + std::to_string(h));
    attrs.push_back(shape);
    attrs.push_back(hue);
    if (with_brightness) {
        Attribute bright{"brightness", config.brightness_classes, {}};
        for (int64_t b = 0; b < config.brightness_classes; ++b) bright.values.push_back("b" + std::to_string(b));
        attrs.push_back(bright);
    }
    const int64_t M = static_cast<int64_t>(attrs.size());

    auto images = torch::empty({n, 3, S, S}, torch::kFloat32);
    auto labels = torch::empty({n, M}, torch::kInt64);
    auto img = images.accessor<float, 4>();
    auto lab = labels.accessor<int64_t, 2>();

    std::mt19937_64 rng(config.seed);
    const double radius = 0.3 * static_cast<double>(S);
    const uint8_t bg8 = static_cast<uint8_t>(std::lround(kBackground * 255.0));

    int64_t i = 0;
    for (int64_t s = 0; s < config.shape_classes; ++s) {
        for (int64_t h = 0; h < config.hue_classes; ++h) {
            for (int64_t b = 0; b < config.brightness_classes; ++b) {
                const double value =
                    with_brightness ? 0.45 + 0.55 * static_cast<double>(b + 1) / config.brightness_classes : 1.0;
                const auto rgb = hsv_to_rgb(360.0 * static_cast<double>(h) / config.hue_classes, 1.0, value);
                for (int64_t c = 0; c < config.count_per_combination; ++c, ++i) {
                    const int64_t dx = uniform_offset(rng, config.jitter);
                    const int64_t dy = uniform_offset(rng, config.jitter);
                    ShapeGeometry geom{kShapeSides[s], S / 2.0 + dx, S / 2.0 + dy, radius};
                    for (int64_t y = 0; y < S; ++y) {
                        for (int64_t x = 0; x < S; ++x) {
                            int hits = 0;
                            for (int sy = 0; sy < kSuperSample; ++sy) {
                                for (int sx = 0; sx < kSuperSample; ++sx) {
                                    const double px = x + (sx + 0.5) / kSuperSample;
                                    const double py = y + (sy + 0.5) / kSuperSample;
                                    hits += geom.contains(px, py) ? 1 : 0;
                                }
                            }
                            const double cover = static_cast<double>(hits) / (kSuperSample * kSuperSample);
                            for (int ch = 0; ch < 3; ++ch) {
                                const double v = kBackground * (1.0 - cover) + rgb[ch] * cover;
                                const auto v8 = hits == 0 ? bg8 : static_cast<uint8_t>(std::lround(v * 255.0));
                                img[i][ch][y][x] = normalize_pixel(v8);
                            }
                        }
                    }
                    lab[i][0] = s;
                    lab[i][1] = h;
                    if (with_brightness) lab[i][2] = b;
                }
            }
        }
    }
    return Dataset(AttributeSchema(std::move(attrs)), images, labels,
                   "synthetic:seed=" + std::to_string(config.seed));
}

uint8_t denormalize_pixel(float v) {
    const float clamped = std::clamp(v, -1.0f, 1.0f);
    return static_cast<uint8_t>(std::lround((clamped + 1.0f) * 0.5f * 255.0f));
}

// ---------------------------------------------------------------------------
// Manifest ingestion / export
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
}

}  // namespace

fs::path schema_sidecar_path(const fs::path& manifest_path) {
    return fs::path(manifest_path.string() + ".schema.json");
}

void write_schema_sidecar(const AttributeSchema& schema, const fs::path& path) {
    json j;
    j["attributes"] = json::array();
    for (const auto& a : schema.attributes()) {
        j["attributes"].push_back({{"name", a.name}, {"class_count", a.class_count}, {"values", a.values}});
    }
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write schema sidecar " + path.string());
    out << j.dump(2) << "\n";
}

AttributeSchema read_schema_sidecar(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot read schema sidecar " + path.string());
    json j;
    try {
        in >> j;
        std::vector<Attribute> attrs;
        for (const auto& a : j.at("attributes")) {
            Attribute attr;
            attr.name = a.at("name").get<std::string>();
            attr.values = a.at("values").get<std::vector<std::string>>();
            attr.class_count = static_cast<int64_t>(attr.values.size());
            attrs.push_back(std::move(attr));
        }
        return AttributeSchema(std::move(attrs));
    } catch (const json::exception& e) {
        throw IngestionError("malformed schema sidecar " + path.string() + ": " + e.what());
    }
}

Dataset load_manifest(const fs::path& manifest_path, int64_t image_size,
                      const std::optional<AttributeSchema>& schema_override) {
    std::ifstream in(manifest_path);
    if (!in) throw IngestionError("cannot open manifest " + manifest_path.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw IngestionError("manifest " + manifest_path.string() + " is empty");
    strip_cr(header_line);
    const auto header = split_csv_line(header_line);
    if (header.size() < 2 || header[0] != "filepath") {
        throw IngestionError("manifest header must be 'filepath,attr1,...' (row 1)");
    }
    const std::vector<std::string> names(header.begin() + 1, header.end());
    const size_t M = names.size();

    std::vector<std::vector<std::string>> rows;
    std::vector<size_t> row_numbers;
    std::string line;
    size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        strip_cr(line);
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw IngestionError("manifest row " + std::to_string(row_no) + ": expected " +
                                 std::to_string(header.size()) + " columns, got " + std::to_string(fields.size()));
        }
        rows.push_back(std::move(fields));
        row_numbers.push_back(row_no);
    }

    AttributeSchema schema;
    const auto sidecar = schema_sidecar_path(manifest_path);
    if (schema_override) {
        schema = *schema_override;
    } else if (fs::exists(sidecar)) {
        schema = read_schema_sidecar(sidecar);
    } else {
        std::vector<Attribute> attrs;
        for (size_t m = 0; m < M; ++m) {
            std::set<std::string> seen;
            for (const auto& r : rows) seen.insert(r[m + 1]);
            Attribute a{names[m], static_cast<int64_t>(seen.size()), {seen.begin(), seen.end()}};
            attrs.push_back(std::move(a));
        }
        schema = AttributeSchema(std::move(attrs));
        if (!rows.empty()) write_schema_sidecar(schema, sidecar);
    }
    if (static_cast<size_t>(schema.size()) != M) {
        throw IngestionError("manifest has " + std::to_string(M) + " attributes but the label mapping has " +
                             std::to_string(schema.size()));
    }
    for (size_t m = 0; m < M; ++m) {
        if (schema.at(static_cast<int64_t>(m)).name != names[m]) {
            throw IngestionError("manifest column '" + names[m] + "' does not match mapping attribute '" +
                                 schema.at(static_cast<int64_t>(m)).name + "'");
        }
    }

    std::vector<std::map<std::string, int64_t>> lookup(M);
    for (size_t m = 0; m < M; ++m) {
        const auto& values = schema.at(static_cast<int64_t>(m)).values;
        for (size_t k = 0; k < values.size(); ++k) lookup[m][values[k]] = static_cast<int64_t>(k);
    }

    const auto n = static_cast<int64_t>(rows.size());
    auto images = torch::empty({n, 3, image_size, image_size}, torch::kFloat32);
    auto labels = torch::empty({n, static_cast<int64_t>(M)}, torch::kInt64);
    auto lab = labels.accessor<int64_t, 2>();
    const auto base = manifest_path.parent_path();
    for (int64_t i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<size_t>(i)];
        const auto rn = std::to_string(row_numbers[static_cast<size_t>(i)]);
        fs::path p = r[0];
        if (p.is_relative()) p = base / p;
        try {
            images[i].copy_(read_image(p, image_size));
        } catch (const IngestionError& e) {
            throw IngestionError("manifest row " + rn + ": " + e.what());
        }
        for (size_t m = 0; m < M; ++m) {
            auto it = lookup[m].find(r[m + 1]);
            if (it == lookup[m].end()) {
                throw IngestionError("manifest row " + rn + ": label '" + r[m + 1] + "' not in mapping for '" +
                                     names[m] + "'");
            }
            lab[i][static_cast<int64_t>(m)] = it->second;
        }
    }
    return Dataset(std::move(schema), images, labels, "manifest:" + manifest_path.string());
}

fs::path export_manifest(const Dataset& dataset, const fs::path& dir) {
    fs::create_directories(dir / "images");
    const auto manifest = dir / "manifest.csv";
    std::ofstream out(manifest);
    if (!out) throw IngestionError("cannot write manifest " + manifest.string());
    out << "filepath";
    for (const auto& a : dataset.schema().attributes()) out << "," << csv_field(a.name);
    out << "\n";
    for (int64_t i = 0; i < dataset.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(i));
        const auto rel = fs::path("images") / name;
        write_png(dataset.images()[i], dir / rel);
        out << csv_field(rel.string());
        auto row = dataset.labels()[i];
        for (int64_t m = 0; m < dataset.schema().size(); ++m) {
            out << "," << csv_field(dataset.schema().at(m).values.at(static_cast<size_t>(row[m].item<int64_t>())));
        }
        out << "\n";
    }
    write_schema_sidecar(dataset.schema(), schema_sidecar_path(manifest));
    return manifest;
}

Split holdout_split(const Dataset& dataset, const std::string& attribute, const std::set<int64_t>& held_values) {
    const auto col = dataset.schema().find(attribute);
    if (!col) throw SplitError("unknown split attribute '" + attribute + "'");
    const auto classes = dataset.schema().at(*col).class_count;
    if (held_values.empty()) throw SplitError("held-out value set is empty");
    for (auto v : held_values) {
        if (v < 0 || v >= classes) {
            throw SplitError("held-out value " + std::to_string(v) + " outside attribute '" + attribute + "'");
        }
    }
    if (static_cast<int64_t>(held_values.size()) >= classes) {
        throw SplitError("held-out values cover every class of '" + attribute + "'");
    }
    std::vector<int64_t> train_idx, test_idx;
    if (!dataset.empty()) {
        auto acc = dataset.labels().accessor<int64_t, 2>();
        for (int64_t i = 0; i < dataset.size(); ++i) {
            (held_values.count(acc[i][*col]) ? test_idx : train_idx).push_back(i);
        }
    }
    return {dataset.subset(train_idx), dataset.subset(test_idx)};
}

}  // namespace disent
