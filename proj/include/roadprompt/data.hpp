#pragma once

#include "roadprompt/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace roadprompt {

enum class Split : std::uint8_t { train, val, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetEntry {
    Split split = Split::train;
    std::filesystem::path image;
    std::filesystem::path mask;
};

/// Image/mask pairs under root/{split}/images and root/{split}/masks, paired by
/// file stem. Entries are sorted by split, then filename.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<DatasetEntry> entries;

    std::vector<DatasetEntry> split(Split s) const;
    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

inline constexpr const char* kManifestFile = "manifest.txt";

/// Reads root/manifest.txt when present, otherwise scans the directory layout.
DatasetManifest load_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);

/// Loads one pair and binarizes the mask. Rejects missing files and mismatched
/// dimensions with the offending paths in the message.
std::pair<Image, BinaryMask> load_pair(const DatasetEntry& entry);
void save_pair(const Image& image, const BinaryMask& mask, const DatasetEntry& entry);

struct SyntheticSpec {
    int image_size = 128;
    int count = 500;
    std::uint64_t seed = 0;
    std::uint64_t texture_seed = 0;
    int min_roads = 1;
    int max_roads = 3;
    /// Road stroke widths in pixels; even values round up to the next odd width.
    int min_width = 3;
    int max_width = 7;
    /// Share of roads painted close to the background color.
    double low_contrast_fraction = 0.25;
    /// Road-colored rectangles ("rooftops") per image, drawn uniformly from [0, max].
    int max_distractors = 3;
    double min_foreground = 0.005;
    double max_foreground = 0.20;

    void validate() const;
};

/// One synthetic scene; deterministic in (spec, index).
std::pair<Image, BinaryMask> render_synthetic(const SyntheticSpec& spec, int index);

/// Renders spec.count scenes under `root`, split 80/10/10 by index, and writes
/// the manifest.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& root);

} // namespace roadprompt
