#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "errors.hpp"
#include "image_io.hpp"

namespace fs = std::filesystem;

namespace oneshot {

int category_numeral(Category c) {
    static constexpr int numerals[kCategoryCount] = {1, 2, 5, 6, 7};
    return numerals[static_cast<size_t>(c)];
}

Category category_from_numeral(int numeral) {
    for (Category c : kAllCategories)
        if (category_numeral(c) == numeral) return c;
    throw std::invalid_argument("unknown resin-code numeral " + std::to_string(numeral));
}

const char* category_name(Category c) {
    static constexpr const char* names[kCategoryCount] = {"PET", "PE-HD", "PP", "PS", "Other"};
    return names[static_cast<size_t>(c)];
}

const char* category_dirname(Category c) {
    static constexpr const char* dirs[kCategoryCount] = {"01_PET", "02_PEHD", "05_PP", "06_PS", "07_OTHER"};
    return dirs[static_cast<size_t>(c)];
}

void Dataset::rebuild_index() {
    for (auto& v : by_category) v.clear();
    for (size_t i = 0; i < images.size(); ++i)
        by_category[static_cast<size_t>(images[i].category)].push_back(static_cast<int>(i));
}

std::array<int, kCategoryCount> Dataset::counts() const {
    std::array<int, kCategoryCount> c{};
    for (size_t i = 0; i < by_category.size(); ++i) c[i] = static_cast<int>(by_category[i].size());
    return c;
}

std::string Dataset::stats() const {
    std::ostringstream os;
    os << size() << " images (";
    for (Category c : kAllCategories) {
        if (c != Category::PET) os << ", ";
        os << category_name(c) << ": " << of(c).size();
    }
    os << ")";
    return os.str();
}

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// "02_bottle.jpg" / "05-cup.png" -> category; nullopt-ish via bool.
bool category_from_filename(const std::string& name, Category* out) {
    if (name.size() < 3 || !std::isdigit(static_cast<unsigned char>(name[0])) ||
        !std::isdigit(static_cast<unsigned char>(name[1])))
        return false;
    const int code = (name[0] - '0') * 10 + (name[1] - '0');
    for (Category c : kAllCategories) {
        if (category_numeral(c) == code) {
            *out = c;
            return true;
        }
    }
    return false;
}

std::vector<std::string> sorted_image_files(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && has_image_extension(entry.path())) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

Dataset load_dataset(const std::string& root, int target_size) {
    const fs::path rootp(root);
    if (!fs::is_directory(rootp)) throw IoError("dataset root is not a directory: " + root);

    bool any_category_dir = false;
    for (Category c : kAllCategories)
        if (fs::is_directory(rootp / category_dirname(c))) any_category_dir = true;

    Dataset ds;
    if (any_category_dir) {
        for (Category c : kAllCategories) {
            const fs::path dir = rootp / category_dirname(c);
            if (!fs::is_directory(dir)) throw IoError("missing category directory: " + dir.string());
            for (const std::string& name : sorted_image_files(dir)) {
                LabeledImage img;
                img.id = std::string(category_dirname(c)) + "/" + name;
                img.category = c;
                img.pixels = load_image_tensor((dir / name).string(), target_size);
                ds.images.push_back(std::move(img));
            }
        }
    } else {
        // WaDaBa-style flat layout: the two-digit resin code leads the name.
        std::vector<std::pair<Category, std::string>> found;
        for (const std::string& name : sorted_image_files(rootp)) {
            Category c;
            if (category_from_filename(name, &c)) found.emplace_back(c, name);
        }
        if (found.empty())
            throw IoError("no category directories (01_PET, 02_PEHD, 05_PP, 06_PS, 07_OTHER) and no files with "
                          "resin-code prefixes under: " + root);
        std::stable_sort(found.begin(), found.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [c, name] : found) {
            LabeledImage img;
            img.id = name;
            img.category = c;
            img.pixels = load_image_tensor((rootp / name).string(), target_size);
            ds.images.push_back(std::move(img));
        }
    }
    ds.rebuild_index();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic families
// ---------------------------------------------------------------------------

namespace {

struct ShapeParams {
    double cx, cy;      // center
    double scale;       // relative size
    double fg, bg;      // intensities
    double p1, p2;      // family-specific (period/phase)
};

void draw_family(Category c, const ShapeParams& sp, int size, std::vector<float>& px) {
    const double cx = sp.cx, cy = sp.cy;
    const double unit = size / 105.0;  // shape dimensions scale with the canvas
    auto put = [&](int x, int y, double v) { px[static_cast<size_t>(y) * size + x] = static_cast<float>(v); };

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double v = sp.bg;
            const double dx = x - cx, dy = y - cy;
            switch (c) {
                case Category::PET: {  // filled disk
                    const double r = 26.0 * sp.scale * unit;
                    if (dx * dx + dy * dy <= r * r) v = sp.fg;
                    break;
                }
                case Category::PEHD: {  // hollow square outline
                    const double h = 30.0 * sp.scale * unit;
                    const double stroke = std::max(1.5, 7.0 * unit);
                    const double m = std::max(std::fabs(dx), std::fabs(dy));
                    if (m <= h && m >= h - stroke) v = sp.fg;
                    break;
                }
                case Category::PP: {  // filled upward triangle
                    const double h = 32.0 * sp.scale * unit;
                    // half-planes of the triangle (cx, cy-h), (cx-h, cy+h), (cx+h, cy+h)
                    if (dy <= h && dy >= -h && std::fabs(dx) <= (dy + h) * 0.5) v = sp.fg;
                    break;
                }
                case Category::PS: {  // horizontal stripes over the full canvas
                    const double period = std::max(2.0, sp.p1 * unit);
                    const double t = std::fmod(y + sp.p2 * unit, period);
                    if (t < period * 0.5) v = sp.fg;
                    break;
                }
                case Category::OTHER: {  // checkerboard over the full canvas
                    const double cell = std::max(2.0, 0.85 * sp.p1 * unit);
                    const long ix = static_cast<long>(std::floor((x + sp.p2 * unit) / cell));
                    const long iy = static_cast<long>(std::floor((y + sp.p2 * unit) / cell));
                    if (((ix + iy) & 1) == 0) v = sp.fg;
                    break;
                }
            }
            put(x, y, v);
        }
    }
}

}  // namespace

Dataset gen_synthetic(uint64_t seed, int n_per_class, int size) {
    if (n_per_class < 1) throw std::invalid_argument("gen_synthetic: n_per_class must be >= 1");
    Rng rng(seed);
    Dataset ds;
    std::vector<float> px(static_cast<size_t>(size) * size);

    for (Category c : kAllCategories) {
        for (int k = 0; k < n_per_class; ++k) {
            // fixed number of draws per image keeps the stream aligned across families
            ShapeParams sp;
            const double unit = size / 105.0;
            const double jx = rng.uniform_real(-10.0, 10.0);
            const double jy = rng.uniform_real(-10.0, 10.0);
            sp.cx = size / 2.0 + jx * unit;
            sp.cy = size / 2.0 + jy * unit;
            sp.scale = rng.uniform_real(0.75, 1.25);
            sp.fg = rng.uniform_real(0.72, 0.95);
            sp.bg = rng.uniform_real(0.05, 0.18);
            sp.p1 = rng.uniform_real(10.0, 16.0);
            sp.p2 = rng.uniform_real(0.0, 16.0);

            draw_family(c, sp, size, px);

            LabeledImage img;
            img.category = c;
            {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "img_%05d.png", k);
                img.id = std::string(category_dirname(c)) + "/" + buf;
            }
            img.pixels = Tensor({1, size, size});
            for (size_t i = 0; i < px.size(); ++i) {
                double v = px[i] + rng.uniform_real(-0.03, 0.03);
                v = std::min(1.0, std::max(0.0, v));
                // quantize to the 8-bit grid for a lossless PNG round trip
                img.pixels[i] = static_cast<float>(std::lround(v * 255.0) / 255.0);
            }
            ds.images.push_back(std::move(img));
        }
    }
    ds.rebuild_index();
    return ds;
}

void materialize(const Dataset& dataset, const std::string& root) {
    const fs::path rootp(root);
    std::error_code ec;
    fs::create_directories(rootp, ec);
    if (ec) throw IoError("cannot create directory: " + root + " (" + ec.message() + ")");
    for (Category c : kAllCategories) {
        fs::create_directories(rootp / category_dirname(c), ec);
        if (ec) throw IoError("cannot create directory: " + (rootp / category_dirname(c)).string());
    }
    std::vector<uint8_t> buf;
    for (const LabeledImage& img : dataset.images) {
        const int h = img.pixels.dim(1), w = img.pixels.dim(2);
        buf.resize(static_cast<size_t>(w) * h);
        for (size_t i = 0; i < buf.size(); ++i) {
            const double v = std::min(1.0, std::max(0.0, static_cast<double>(img.pixels[i])));
            buf[i] = static_cast<uint8_t>(std::lround(v * 255.0));
        }
        write_gray_png((rootp / img.id).string(), w, h, buf.data());
    }
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction, uint64_t seed,
                                  std::vector<std::string>* warnings) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split: test_fraction must be in (0,1), got " + std::to_string(test_fraction));

    Rng rng(seed);
    std::vector<bool> in_test(dataset.size(), false);
    for (Category c : kAllCategories) {
        std::vector<int> idx = dataset.of(c);
        const int n = static_cast<int>(idx.size());
        if (n == 0) continue;
        if (n == 1) {
            if (warnings)
                warnings->push_back(std::string("category ") + category_name(c) +
                                    " has a single image; kept in train");
            continue;
        }
        rng.shuffle(idx);
        int n_test = static_cast<int>(std::llround(n * test_fraction));
        n_test = std::max(1, std::min(n - 1, n_test));
        for (int i = 0; i < n_test; ++i) in_test[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;
    }

    Dataset train, test;
    for (size_t i = 0; i < dataset.size(); ++i)
        (in_test[i] ? test : train).images.push_back(dataset.images[i]);
    train.rebuild_index();
    test.rebuild_index();
    return {std::move(train), std::move(test)};
}

PairSample sample_pair(const Dataset& train, Rng& rng) {
    std::vector<Category> nonempty, with_two;
    for (Category c : kAllCategories) {
        if (!train.of(c).empty()) nonempty.push_back(c);
        if (train.of(c).size() >= 2) with_two.push_back(c);
    }
    if (nonempty.empty()) throw std::invalid_argument("sample_pair: empty dataset");

    bool same = rng.uniform_real() < 0.5;
    if (same && with_two.empty()) same = false;  // redraw as cross-pair
    if (!same && nonempty.size() < 2) {
        if (with_two.empty())
            throw std::invalid_argument("sample_pair: unsatisfiable dataset, " + train.stats());
        same = true;
    }

    PairSample s{};
    if (same) {
        const Category c = with_two[static_cast<size_t>(rng.uniform(with_two.size()))];
        const auto& pool = train.of(c);
        const size_t i = static_cast<size_t>(rng.uniform(pool.size()));
        size_t j = static_cast<size_t>(rng.uniform(pool.size() - 1));
        if (j >= i) ++j;  // distinct, uniform over the remaining images
        s.first = pool[i];
        s.second = pool[j];
        s.label = 0;
    } else {
        const size_t a = static_cast<size_t>(rng.uniform(nonempty.size()));
        size_t b = static_cast<size_t>(rng.uniform(nonempty.size() - 1));
        if (b >= a) ++b;
        const auto& pa = train.of(nonempty[a]);
        const auto& pb = train.of(nonempty[b]);
        s.first = pa[static_cast<size_t>(rng.uniform(pa.size()))];
        s.second = pb[static_cast<size_t>(rng.uniform(pb.size()))];
        s.label = 1;
    }
    return s;
}

TripletSample sample_triplet(const Dataset& train, Rng& rng) {
    std::vector<int> eligible;  // images whose category has >= 2 members
    size_t others_total = 0;
    for (Category c : kAllCategories) {
        const auto& pool = train.of(c);
        if (pool.size() >= 2) eligible.insert(eligible.end(), pool.begin(), pool.end());
    }
    size_t nonempty = 0;
    for (Category c : kAllCategories) nonempty += train.of(c).empty() ? 0 : 1;
    if (eligible.empty() || nonempty < 2)
        throw std::invalid_argument("sample_triplet: need a category with >= 2 images and >= 2 categories, got " +
                                    train.stats());

    TripletSample t{};
    t.anchor = eligible[static_cast<size_t>(rng.uniform(eligible.size()))];
    const Category ac = train.images[static_cast<size_t>(t.anchor)].category;
    const auto& pool = train.of(ac);

    // positive: uniform over the anchor's category minus the anchor
    size_t apos = 0;
    for (size_t i = 0; i < pool.size(); ++i)
        if (pool[i] == t.anchor) apos = i;
    size_t p = static_cast<size_t>(rng.uniform(pool.size() - 1));
    if (p >= apos) ++p;
    t.positive = pool[p];

    // negative: uniform over all images of other categories
    others_total = train.size() - pool.size();
    size_t pick = static_cast<size_t>(rng.uniform(others_total));
    for (Category c : kAllCategories) {
        if (c == ac) continue;
        const auto& opool = train.of(c);
        if (pick < opool.size()) {
            t.negative = opool[pick];
            break;
        }
        pick -= opool.size();
    }
    return t;
}

}  // namespace oneshot
