#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fs2ffpe/image.hpp"
#include "fs2ffpe/rng.hpp"

namespace fs2ffpe {

enum class Domain { FS, FFPE };
enum class Split { train, test };
enum class StainLabel { positive, negative };

const char* to_string(Domain d);
const char* to_string(Split s);
const char* to_string(StainLabel l);

struct ManifestEntry {
    std::string path;  // relative to the manifest root
    Domain domain = Domain::FS;
    std::string patient_id;
    Split split = Split::train;
};

// Dataset description. Tile paths are stored relative to `root`; patient ids
// never straddle the train/test boundary.
struct CorpusManifest {
    std::string root;
    std::vector<ManifestEntry> entries;
    std::string magnification_note = "10x, 448x448 source tiles";

    std::vector<const ManifestEntry*> select(Domain d, Split s) const;
    std::string resolve(const ManifestEntry& e) const;
    // Throws DataError if any patient appears in both splits.
    void check_patient_separation() const;

    void save(const std::string& csv_path) const;
    static CorpusManifest load(const std::string& csv_path);
};

// Scans root/{FS,FFPE}/<patient>/<tile>.png. Split assignment is read from
// split_file when it exists, otherwise generated by a seeded patient-level
// 80/20 draw and written back. Every tile must be a 448x448 PNG.
CorpusManifest scan_corpus(const std::string& root_dir, const std::string& split_file,
                           std::uint64_t seed);

// Procedural FS/FFPE histology generator. Tile content (nuclei layout, label,
// colors) is drawn from a content stream; FS degradations (blur, stain
// attenuation, contamination blobs) come from an independent stream, so
// degradation settings never change labels or layout.
struct SynthSpec {
    int train_per_domain = 1000;
    int test_per_domain = 200;
    int patients_train = 8;  // per domain
    int patients_test = 4;
    int nuclei_min = 10;
    int nuclei_max = 24;
    double positive_fraction = 0.5;
    double contamination_blob_rate = 1.5;  // expected blobs per FS tile
    double blur_sigma = 1.6;
    double stain_attenuation = 0.45;
    std::uint64_t seed = 0;
    bool shared_patients = false;  // same patient ids in both domains
    int tile_size = 448;

    void validate() const;
};

// Renders the corpus under out_dir and writes manifest.csv, splits.csv,
// labels.csv (path,label) and contamination.csv (path,n_blobs).
CorpusManifest synthesize_corpus(const SynthSpec& spec, const std::string& out_dir);

std::map<std::string, StainLabel> load_labels(const std::string& csv_path);
std::map<std::string, int> load_contamination(const std::string& csv_path);

// Tile-level positive/negative call by hue voting inside a saturation/value
// nucleus mask; returns nullopt when too few nucleus pixels are found.
// Thresholds are calibrated to the synthetic palette:
//   mask: saturation >= 0.20 and value in [0.10, 0.93]
//   brown (positive) hue band [5, 60] deg, blue (negative) band [160, 280] deg
//   minimum mask size max(50, 0.1% of pixels); ties are indeterminate
std::optional<StainLabel> staining_status_of(const ImageU8& img);

template <typename T>
std::optional<StainLabel> staining_status_of(const ImageTensor<T>& img) {
    return staining_status_of(u8_from_tensor(img.data));
}

// Loads a manifest tile as a [-1,1] tensor, downscaling to target_size when
// the source is larger (trainers running reduced geometry).
template <typename T>
ImageTensor<T> load_tile(const CorpusManifest& m, const ManifestEntry& e, int target_size,
                         Magnification mag = Magnification::x10);

}  // namespace fs2ffpe
