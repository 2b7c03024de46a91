#include "fs2ffpe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fs2ffpe/errors.hpp"
#include "fs2ffpe/geometry.hpp"

namespace fs = std::filesystem;

namespace fs2ffpe {

const char* to_string(Domain d) { return d == Domain::FS ? "FS" : "FFPE"; }
const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }
const char* to_string(StainLabel l) { return l == StainLabel::positive ? "positive" : "negative"; }

namespace {

Domain parse_domain(const std::string& s) {
    if (s == "FS") return Domain::FS;
    if (s == "FFPE") return Domain::FFPE;
    throw DataError("unknown domain '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

std::vector<const ManifestEntry*> CorpusManifest::select(Domain d, Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.domain == d && e.split == s) out.push_back(&e);
    return out;
}

std::string CorpusManifest::resolve(const ManifestEntry& e) const {
    return (fs::path(root) / e.path).string();
}

void CorpusManifest::check_patient_separation() const {
    std::map<std::string, Split> seen;
    for (const auto& e : entries) {
        auto [it, inserted] = seen.emplace(e.patient_id, e.split);
        if (!inserted && it->second != e.split)
            throw DataError("patient '" + e.patient_id + "' appears in both train and test");
    }
}

void CorpusManifest::save(const std::string& csv_path) const {
    std::ofstream f(csv_path);
    if (!f) throw IoError("cannot write manifest: " + csv_path);
    f << "path,domain,patient_id,split\n";
    for (const auto& e : entries)
        f << e.path << ',' << to_string(e.domain) << ',' << e.patient_id << ','
          << to_string(e.split) << '\n';
}

CorpusManifest CorpusManifest::load(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw DataError("cannot open manifest: " + csv_path);
    CorpusManifest m;
    m.root = fs::path(csv_path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    std::string line;
    if (!std::getline(f, line) || line.rfind("path,domain,patient_id,split", 0) != 0)
        throw DataError("manifest missing 'path,domain,patient_id,split' header: " + csv_path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 4) throw DataError("bad manifest row: " + line);
        m.entries.push_back({cols[0], parse_domain(cols[1]), cols[2], parse_split(cols[3])});
    }
    m.check_patient_separation();
    return m;
}

CorpusManifest scan_corpus(const std::string& root_dir, const std::string& split_file,
                           std::uint64_t seed) {
    if (!fs::is_directory(root_dir)) throw DataError("corpus root not found: " + root_dir);

    // Collect patients and tiles from the fixed layout.
    std::map<std::string, std::vector<std::pair<Domain, std::string>>> patient_tiles;
    for (Domain d : {Domain::FS, Domain::FFPE}) {
        fs::path dom_dir = fs::path(root_dir) / to_string(d);
        if (!fs::is_directory(dom_dir)) continue;
        for (const auto& pdir : fs::directory_iterator(dom_dir)) {
            if (!pdir.is_directory()) continue;
            const std::string patient = pdir.path().filename().string();
            for (const auto& tile : fs::directory_iterator(pdir.path())) {
                if (tile.path().extension() != ".png") continue;
                auto rel = fs::relative(tile.path(), root_dir).string();
                auto [h, w] = png_dimensions(tile.path().string());
                if (h != 448 || w != 448)
                    throw DataError("tile " + rel + " is " + std::to_string(w) + "x" +
                                    std::to_string(h) + ", expected 448x448");
                patient_tiles[patient].emplace_back(d, rel);
            }
        }
    }
    if (patient_tiles.empty()) throw DataError("no tiles found under " + root_dir);

    // Split assignment, keyed on patient id only.
    std::map<std::string, Split> assignment;
    if (fs::exists(split_file)) {
        std::ifstream f(split_file);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line.rfind("patient_id", 0) == 0) continue;
            auto cols = split_csv_line(line);
            if (cols.size() != 2) throw DataError("bad split row: " + line);
            assignment[cols[0]] = parse_split(cols[1]);
        }
        for (const auto& [patient, tiles] : patient_tiles)
            if (!assignment.count(patient))
                throw DataError("split file does not cover patient '" + patient + "'");
    } else {
        std::vector<std::string> patients;
        for (const auto& [patient, tiles] : patient_tiles) patients.push_back(patient);
        RngStream rng = RngStream::derive(seed, "patient_split");
        rng.shuffle(patients);
        const std::size_t n_train =
            std::max<std::size_t>(1, (patients.size() * 8 + 5) / 10);
        for (std::size_t i = 0; i < patients.size(); ++i)
            assignment[patients[i]] = i < n_train ? Split::train : Split::test;
        std::ofstream f(split_file);
        if (!f) throw IoError("cannot write split file: " + split_file);
        f << "patient_id,split\n";
        for (const auto& [patient, split] : assignment)
            f << patient << ',' << to_string(split) << '\n';
    }

    CorpusManifest m;
    m.root = root_dir;
    for (const auto& [patient, tiles] : patient_tiles)
        for (const auto& [domain, rel] : tiles)
            m.entries.push_back({rel, domain, patient, assignment.at(patient)});
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    m.check_patient_separation();
    return m;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (positive_fraction < 0 || positive_fraction > 1)
        throw ConfigError("positive_fraction must lie in [0,1]");
    if (contamination_blob_rate < 0 || blur_sigma < 0 || stain_attenuation < 0 ||
        stain_attenuation > 1)
        throw ConfigError("degradation rates must be non-negative (attenuation <= 1)");
    if (train_per_domain < 0 || test_per_domain < 0 || train_per_domain + test_per_domain == 0)
        throw ConfigError("image counts must be non-negative and not all zero");
    if (nuclei_min < 1 || nuclei_max < nuclei_min) throw ConfigError("bad nuclei range");
    if (patients_train < 1 || patients_test < 1) throw ConfigError("need at least one patient");
    if (tile_size < 64 || tile_size % 2 != 0) throw ConfigError("tile_size must be even and >= 64");
}

namespace {

struct Rgb {
    double r, g, b;
};

constexpr Rgb kBackground{233, 226, 219};
constexpr Rgb kPositiveNucleus{125, 82, 48};   // DAB brown family
constexpr Rgb kNegativeNucleus{70, 92, 156};   // hematoxylin blue family
constexpr Rgb kPositiveBlob{172, 126, 74};     // diffuse brown contamination
constexpr Rgb kNegativeBlob{116, 136, 196};    // diffuse blue contamination

inline std::uint64_t hash_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Position-keyed noise in [-1,1]; independent of rendering order.
inline double pixel_noise(std::uint64_t salt, int y, int x) {
    std::uint64_t h = hash_mix(salt ^ (static_cast<std::uint64_t>(y) << 32) ^
                               static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)));
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

struct Nucleus {
    double cx, cy, ra, rb, cos_t, sin_t;
    Rgb color;
    int n_nucleoli;
    double nucleolus_u[3], nucleolus_v[3], nucleolus_r[3];
};

struct TileContent {
    StainLabel label;
    std::vector<Nucleus> nuclei;
    std::uint64_t texture_salt;
};

TileContent draw_content(RngStream& rng, const SynthSpec& spec) {
    TileContent c;
    c.label = rng.uniform01() < spec.positive_fraction ? StainLabel::positive
                                                       : StainLabel::negative;
    c.texture_salt = rng.next_u64();
    const double s = spec.tile_size;
    const int n = spec.nuclei_min + rng.uniform_int(spec.nuclei_max - spec.nuclei_min + 1);
    const Rgb base = c.label == StainLabel::positive ? kPositiveNucleus : kNegativeNucleus;
    for (int i = 0; i < n; ++i) {
        Nucleus nu;
        nu.cx = rng.uniform(0.04, 0.96) * s;
        nu.cy = rng.uniform(0.04, 0.96) * s;
        nu.ra = rng.uniform(0.022, 0.045) * s;
        nu.rb = nu.ra * rng.uniform(0.65, 1.0);
        const double theta = rng.uniform(0, 3.14159265358979);
        nu.cos_t = std::cos(theta);
        nu.sin_t = std::sin(theta);
        const double jr = rng.uniform(-12, 12), jg = rng.uniform(-12, 12),
                     jb = rng.uniform(-12, 12);
        nu.color = {base.r + jr, base.g + jg, base.b + jb};
        nu.n_nucleoli = 1 + rng.uniform_int(3);
        for (int k = 0; k < nu.n_nucleoli; ++k) {
            const double ang = rng.uniform(0, 6.28318530717959);
            const double rad = rng.uniform(0.05, 0.55);
            nu.nucleolus_u[k] = rad * std::cos(ang);
            nu.nucleolus_v[k] = rad * std::sin(ang);
            nu.nucleolus_r[k] = rng.uniform(1.5, 3.2);
        }
        c.nuclei.push_back(nu);
    }
    return c;
}

void gaussian_blur(std::vector<double>& img, int h, int w, double sigma) {
    if (sigma <= 0.05) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (double& k : kernel) k /= ksum;

    std::vector<double> tmp(img.size());
    // horizontal
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, w - 1);
                const double k = kernel[static_cast<std::size_t>(i + radius)];
                const std::size_t off = (static_cast<std::size_t>(y) * w + xx) * 3;
                acc[0] += k * img[off];
                acc[1] += k * img[off + 1];
                acc[2] += k * img[off + 2];
            }
            const std::size_t off = (static_cast<std::size_t>(y) * w + x) * 3;
            tmp[off] = acc[0];
            tmp[off + 1] = acc[1];
            tmp[off + 2] = acc[2];
        }
    // vertical
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                const double k = kernel[static_cast<std::size_t>(i + radius)];
                const std::size_t off = (static_cast<std::size_t>(yy) * w + x) * 3;
                acc[0] += k * tmp[off];
                acc[1] += k * tmp[off + 1];
                acc[2] += k * tmp[off + 2];
            }
            const std::size_t off = (static_cast<std::size_t>(y) * w + x) * 3;
            img[off] = acc[0];
            img[off + 1] = acc[1];
            img[off + 2] = acc[2];
        }
}

int draw_poisson(RngStream& rng, double lambda) {
    if (lambda <= 0) return 0;
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform01();
    } while (p > limit);
    return k - 1;
}

// Renders one tile. FFPE renders the ideal content; FS applies attenuation,
// contamination and blur on top of the same content process.
ImageU8 render_tile(const TileContent& content, Domain domain, const SynthSpec& spec,
                    RngStream& degrade_rng, int* n_blobs_out) {
    const int s = spec.tile_size;
    std::vector<double> img(static_cast<std::size_t>(s) * s * 3);

    // background with low-frequency texture and fine grain
    const int grid = 8;
    std::vector<double> cells(static_cast<std::size_t>(grid + 1) * (grid + 1));
    for (std::size_t i = 0; i < cells.size(); ++i)
        cells[i] = pixel_noise(content.texture_salt ^ 0x5eedULL, static_cast<int>(i), 0) * 6.0;
    for (int y = 0; y < s; ++y) {
        const double gy = static_cast<double>(y) * grid / s;
        const int y0 = static_cast<int>(gy);
        const double fy = gy - y0;
        for (int x = 0; x < s; ++x) {
            const double gx = static_cast<double>(x) * grid / s;
            const int x0 = static_cast<int>(gx);
            const double fx = gx - x0;
            const double lf =
                cells[static_cast<std::size_t>(y0) * (grid + 1) + x0] * (1 - fy) * (1 - fx) +
                cells[static_cast<std::size_t>(y0) * (grid + 1) + x0 + 1] * (1 - fy) * fx +
                cells[static_cast<std::size_t>(y0 + 1) * (grid + 1) + x0] * fy * (1 - fx) +
                cells[static_cast<std::size_t>(y0 + 1) * (grid + 1) + x0 + 1] * fy * fx;
            const double grain = pixel_noise(content.texture_salt, y, x) * 2.5;
            const std::size_t off = (static_cast<std::size_t>(y) * s + x) * 3;
            img[off] = kBackground.r + lf + grain;
            img[off + 1] = kBackground.g + lf + grain;
            img[off + 2] = kBackground.b + lf + grain;
        }
    }

    // nuclei: crisp edge, darker membrane rim, chromatin speckle, nucleoli
    const double edge = domain == Domain::FFPE ? 1.4 : 2.8;
    for (std::size_t ni = 0; ni < content.nuclei.size(); ++ni) {
        const Nucleus& nu = content.nuclei[ni];
        const std::uint64_t salt = content.texture_salt ^ (0x9e37ull * (ni + 1));
        const double rmax = std::max(nu.ra, nu.rb) + edge + 2;
        const int x0 = std::max(0, static_cast<int>(nu.cx - rmax));
        const int x1 = std::min(s - 1, static_cast<int>(nu.cx + rmax) + 1);
        const int y0 = std::max(0, static_cast<int>(nu.cy - rmax));
        const int y1 = std::min(s - 1, static_cast<int>(nu.cy + rmax) + 1);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - nu.cx, dy = y - nu.cy;
                const double u = (dx * nu.cos_t + dy * nu.sin_t) / nu.ra;
                const double v = (-dx * nu.sin_t + dy * nu.cos_t) / nu.rb;
                const double d = std::sqrt(u * u + v * v);
                const double e = edge / nu.ra;
                if (d > 1 + e) continue;
                double alpha = std::clamp((1 + e - d) / (2 * e), 0.0, 1.0);
                Rgb col = nu.color;
                if (domain == Domain::FFPE) {
                    if (d > 0.78 && d <= 1 + e) {  // membrane
                        col.r *= 0.72;
                        col.g *= 0.72;
                        col.b *= 0.72;
                    }
                    const double speckle = pixel_noise(salt, y, x) * 11.0;
                    col.r += speckle;
                    col.g += speckle;
                    col.b += speckle;
                    for (int k = 0; k < nu.n_nucleoli; ++k) {
                        const double nx = nu.cx + nu.nucleolus_u[k] * nu.ra * nu.cos_t -
                                          nu.nucleolus_v[k] * nu.rb * nu.sin_t;
                        const double ny = nu.cy + nu.nucleolus_u[k] * nu.ra * nu.sin_t +
                                          nu.nucleolus_v[k] * nu.rb * nu.cos_t;
                        const double dd = std::hypot(x - nx, y - ny);
                        if (dd < nu.nucleolus_r[k]) {
                            col.r *= 0.60;
                            col.g *= 0.60;
                            col.b *= 0.60;
                        }
                    }
                } else {
                    const double speckle = pixel_noise(salt, y, x) * 4.0;
                    col.r += speckle;
                    col.g += speckle;
                    col.b += speckle;
                }
                const std::size_t off = (static_cast<std::size_t>(y) * s + x) * 3;
                img[off] = img[off] * (1 - alpha) + col.r * alpha;
                img[off + 1] = img[off + 1] * (1 - alpha) + col.g * alpha;
                img[off + 2] = img[off + 2] * (1 - alpha) + col.b * alpha;
            }
        }
    }

    int n_blobs = 0;
    if (domain == Domain::FS) {
        // weak staining: wash the whole tile toward the background color
        if (spec.stain_attenuation > 0) {
            for (std::size_t i = 0; i < img.size(); i += 3) {
                img[i] += spec.stain_attenuation * (kBackground.r - img[i]);
                img[i + 1] += spec.stain_attenuation * (kBackground.g - img[i + 1]);
                img[i + 2] += spec.stain_attenuation * (kBackground.b - img[i + 2]);
            }
        }
        // contamination blobs whose hue conflicts with the tile's true label
        n_blobs = draw_poisson(degrade_rng, spec.contamination_blob_rate);
        const Rgb blob_base =
            content.label == StainLabel::positive ? kNegativeBlob : kPositiveBlob;
        for (int bi = 0; bi < n_blobs; ++bi) {
            const double bx = degrade_rng.uniform(0, 1) * s;
            const double by = degrade_rng.uniform(0, 1) * s;
            const double br = degrade_rng.uniform(0.09, 0.24) * s;
            const double amax = degrade_rng.uniform(0.38, 0.60);
            const double jr = degrade_rng.uniform(-10, 10);
            const double jg = degrade_rng.uniform(-10, 10);
            const double jb = degrade_rng.uniform(-10, 10);
            const Rgb col{blob_base.r + jr, blob_base.g + jg, blob_base.b + jb};
            const int px0 = std::max(0, static_cast<int>(bx - 3 * br));
            const int px1 = std::min(s - 1, static_cast<int>(bx + 3 * br) + 1);
            const int py0 = std::max(0, static_cast<int>(by - 3 * br));
            const int py1 = std::min(s - 1, static_cast<int>(by + 3 * br) + 1);
            for (int y = py0; y <= py1; ++y)
                for (int x = px0; x <= px1; ++x) {
                    const double dd = std::hypot(x - bx, y - by) / br;
                    const double alpha = amax * std::exp(-2.0 * dd * dd);
                    if (alpha < 0.01) continue;
                    const std::size_t off = (static_cast<std::size_t>(y) * s + x) * 3;
                    img[off] = img[off] * (1 - alpha) + col.r * alpha;
                    img[off + 1] = img[off + 1] * (1 - alpha) + col.g * alpha;
                    img[off + 2] = img[off + 2] * (1 - alpha) + col.b * alpha;
                }
        }
        gaussian_blur(img, s, s, spec.blur_sigma);
    }
    if (n_blobs_out) *n_blobs_out = n_blobs;

    ImageU8 out;
    out.height = s;
    out.width = s;
    out.rgb.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        out.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img[i]), 0l, 255l));
    return out;
}

}  // namespace

CorpusManifest synthesize_corpus(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(out_dir);

    CorpusManifest m;
    m.root = out_dir;

    std::ofstream labels(fs::path(out_dir) / "labels.csv");
    std::ofstream contamination(fs::path(out_dir) / "contamination.csv");
    std::ofstream splits(fs::path(out_dir) / "splits.csv");
    if (!labels || !contamination || !splits)
        throw IoError("cannot write sidecar files under " + out_dir);
    labels << "path,label\n";
    contamination << "path,n_blobs\n";
    splits << "patient_id,split\n";

    std::map<std::string, Split> patient_split;
    for (Domain domain : {Domain::FS, Domain::FFPE}) {
        const char* prefix = spec.shared_patients ? "P" : (domain == Domain::FS ? "P" : "Q");
        for (Split split : {Split::train, Split::test}) {
            const int n_tiles =
                split == Split::train ? spec.train_per_domain : spec.test_per_domain;
            const int n_patients =
                split == Split::train ? spec.patients_train : spec.patients_test;
            if (n_tiles == 0) continue;
            for (int i = 0; i < n_tiles; ++i) {
                const int pidx =
                    (split == Split::test ? spec.patients_train : 0) + i % n_patients;
                char patient[16];
                std::snprintf(patient, sizeof patient, "%s%03d", prefix, pidx);
                patient_split[patient] = split;
                char fname[64];
                std::snprintf(fname, sizeof fname, "tile_%05d.png", i / n_patients);
                const std::string rel =
                    (fs::path(to_string(domain)) / patient / fname).string();

                const std::string key = std::string(to_string(domain)) + "/" + patient + "/" +
                                        std::to_string(i / n_patients) + "/" +
                                        to_string(split);
                RngStream content_rng = RngStream::derive(spec.seed, "content/" + key);
                RngStream degrade_rng = RngStream::derive(spec.seed, "degrade/" + key);

                TileContent content = draw_content(content_rng, spec);
                int n_blobs = 0;
                ImageU8 tile = render_tile(content, domain, spec, degrade_rng, &n_blobs);

                fs::create_directories(fs::path(out_dir) / to_string(domain) / patient);
                write_png((fs::path(out_dir) / rel).string(), tile);

                labels << rel << ',' << to_string(content.label) << '\n';
                if (domain == Domain::FS) contamination << rel << ',' << n_blobs << '\n';
                m.entries.push_back({rel, domain, patient, split});
            }
        }
    }
    for (const auto& [patient, split] : patient_split)
        splits << patient << ',' << to_string(split) << '\n';

    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    m.check_patient_separation();
    m.save((fs::path(out_dir) / "manifest.csv").string());
    return m;
}

std::map<std::string, StainLabel> load_labels(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw DataError("cannot open labels: " + csv_path);
    std::map<std::string, StainLabel> out;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 2) throw DataError("bad labels row: " + line);
        out[cols[0]] =
            cols[1] == "positive" ? StainLabel::positive : StainLabel::negative;
    }
    return out;
}

std::map<std::string, int> load_contamination(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw DataError("cannot open contamination index: " + csv_path);
    std::map<std::string, int> out;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 2) throw DataError("bad contamination row: " + line);
        out[cols[0]] = std::stoi(cols[1]);
    }
    return out;
}

std::optional<StainLabel> staining_status_of(const ImageU8& img) {
    long long brown = 0, blue = 0, mask = 0;
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = img.rgb[3 * i], g = img.rgb[3 * i + 1], b = img.rgb[3 * i + 2];
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        if (mx <= 0) continue;
        const double sat = (mx - mn) / mx;
        const double val = mx / 255.0;
        if (sat < 0.20 || val < 0.10 || val > 0.93) continue;
        ++mask;
        double hue;
        if (mx == mn) continue;
        if (mx == r) hue = 60.0 * std::fmod((g - b) / (mx - mn), 6.0);
        else if (mx == g) hue = 60.0 * ((b - r) / (mx - mn) + 2.0);
        else hue = 60.0 * ((r - g) / (mx - mn) + 4.0);
        if (hue < 0) hue += 360.0;
        if (hue >= 5 && hue <= 60) ++brown;
        else if (hue >= 160 && hue <= 280) ++blue;
    }
    const long long min_mask = std::max<long long>(50, static_cast<long long>(n / 1000));
    if (mask < min_mask || brown == blue) return std::nullopt;
    return brown > blue ? StainLabel::positive : StainLabel::negative;
}

template <typename T>
ImageTensor<T> load_tile(const CorpusManifest& m, const ManifestEntry& e, int target_size,
                         Magnification mag) {
    ImageU8 raw = read_png(m.resolve(e));
    Tensor<T> t = tensor_from_u8<T>(raw);
    if (raw.height != target_size || raw.width != target_size) {
        if (raw.height < target_size || raw.width < target_size)
            throw DataError("tile " + e.path + " smaller than requested size " +
                            std::to_string(target_size));
        t = kernels::resize_bilinear_t(t, target_size, target_size);
    }
    return ImageTensor<T>(std::move(t), mag, e.path);
}

template ImageTensor<float> load_tile<float>(const CorpusManifest&, const ManifestEntry&, int,
                                             Magnification);
template ImageTensor<double> load_tile<double>(const CorpusManifest&, const ManifestEntry&, int,
                                               Magnification);

}  // namespace fs2ffpe
