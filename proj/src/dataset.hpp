#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace oneshot {

/// The five plastic resin-code categories present in WaDaBa.
enum class Category : uint8_t { PET = 0, PEHD = 1, PP = 2, PS = 3, OTHER = 4 };

inline constexpr int kCategoryCount = 5;
inline constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::PET, Category::PEHD, Category::PP, Category::PS, Category::OTHER};

int category_numeral(Category c);                // SPI resin code: 1, 2, 5, 6, 7
Category category_from_numeral(int numeral);     // throws on unknown numeral
const char* category_name(Category c);           // PET, PE-HD, PP, PS, Other
const char* category_dirname(Category c);        // 01_PET, 02_PEHD, ...

struct LabeledImage {
    std::string id;  // "<dir>/<filename>"
    Category category;
    Tensor pixels;  // [1,S,S] in [0,1]
};

struct Dataset {
    std::vector<LabeledImage> images;
    std::array<std::vector<int>, kCategoryCount> by_category;

    void rebuild_index();
    size_t size() const { return images.size(); }
    const std::vector<int>& of(Category c) const { return by_category[static_cast<size_t>(c)]; }
    std::array<int, kCategoryCount> counts() const;
    std::string stats() const;
};

/// Indices into a Dataset. label is 0 for a same-category pair, 1 otherwise.
struct PairSample {
    int first;
    int second;
    int label;
};

struct TripletSample {
    int anchor;
    int positive;
    int negative;
};

/// Loads the "<root>/01_PET, 02_PEHD, 05_PP, 06_PS, 07_OTHER" layout of
/// PNG/JPEG files. When none of those directories exist, falls back to files
/// directly under root whose names start with the two-digit resin code.
/// Images are converted to grayscale luminance, bilinearly resized and scaled
/// to [0,1]; order is by category then lexicographic filename.
Dataset load_dataset(const std::string& root, int target_size = 105);

/// Five parametric shape families (disk, hollow square, triangle, stripes,
/// checkerboard), randomly placed, scaled and noise-perturbed. Pixel values
/// are quantized to the 8-bit grid so a PNG round trip is lossless.
Dataset gen_synthetic(uint64_t seed, int n_per_class, int size = 105);

/// Writes dataset images as grayscale PNGs in the directory layout that
/// load_dataset reads.
void materialize(const Dataset& dataset, const std::string& root);

/// Stratified split. Every category keeps at least one image on each side
/// when its count permits; a singleton category goes entirely to train and a
/// warning is appended.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction, uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr);

/// Same-category pair with probability 1/2 (distinct images), otherwise a
/// cross-category pair; categories uniform, images uniform within category.
/// Falls back to the other kind when a draw is unsatisfiable.
PairSample sample_pair(const Dataset& train, Rng& rng);

/// Anchor uniform over images whose category has >= 2 members, positive
/// uniform over that category minus the anchor, negative uniform over all
/// images of other categories.
TripletSample sample_triplet(const Dataset& train, Rng& rng);

}  // namespace oneshot
