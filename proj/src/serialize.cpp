#include "serialize.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "errors.hpp"

namespace oneshot {

namespace {

// little-endian writers/readers, independent of host byte order

class Writer {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* data, size_t n) {
        const char* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void magic(const char m[4]) { bytes(m, 4); }

    void to_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path);
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path);
    }
    size_t size() const { return buf_.size(); }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open for reading: " + path);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
    uint16_t u16() { return static_cast<uint16_t>(gather(2)); }
    uint32_t u32() { return static_cast<uint32_t>(gather(4)); }
    uint64_t u64() { return gather(8); }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        const char* p = take(n);
        return std::string(p, n);
    }
    void expect_magic(const char m[4], const char* what) {
        if (buf_.size() - pos_ < 4 || std::memcmp(buf_.data() + pos_, m, 4) != 0)
            throw IoError(std::string("bad magic: not a ") + what + " file: " + path_);
        pos_ += 4;
    }
    bool exhausted() const { return pos_ == buf_.size(); }

private:
    const char* take(size_t n) {
        if (buf_.size() - pos_ < n) throw IoError("truncated file: " + path_);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    uint64_t gather(size_t n) {
        const char* p = take(n);
        uint64_t v = 0;
        for (size_t i = 0; i < n; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::string path_;
    std::vector<char> buf_;
    size_t pos_ = 0;
};

constexpr char kCheckpointMagic[4] = {'O', 'S', 'C', 'K'};
constexpr char kEmbeddingsMagic[4] = {'O', 'S', 'E', 'M'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Backbone& net, TrainMode mode, uint64_t seed,
                     uint32_t epochs_completed) {
    Writer w;
    w.magic(kCheckpointMagic);
    w.u32(kVersion);
    w.u8(mode == TrainMode::triplet ? 1 : 0);
    w.u64(seed);
    w.u32(epochs_completed);

    const BackboneConfig& c = net.config;
    w.u32(static_cast<uint32_t>(c.input_size));
    w.u32(static_cast<uint32_t>(c.input_channels));
    w.u32(static_cast<uint32_t>(c.convs.size()));
    for (const ConvSpec& s : c.convs) {
        w.u32(static_cast<uint32_t>(s.out_channels));
        w.u32(static_cast<uint32_t>(s.kernel_size));
    }
    w.u32(static_cast<uint32_t>(c.embedding_dim));
    w.u32(static_cast<uint32_t>(c.triplet_head_dim));
    w.u8(c.include_triplet_head ? 1 : 0);

    w.u32(static_cast<uint32_t>(net.params.size()));
    for (const auto& p : net.params) {
        w.u16(static_cast<uint16_t>(p->name.size()));
        w.bytes(p->name.data(), p->name.size());
        w.u32(static_cast<uint32_t>(p->value.ndim()));
        for (int d : p->value.shape()) w.u32(static_cast<uint32_t>(d));
        for (size_t i = 0; i < p->value.size(); ++i) w.f32(p->value[i]);
    }
    w.to_file(path);
}

LoadedModel load_checkpoint(const std::string& path) {
    Reader r(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

    LoadedModel m;
    m.mode = r.u8() == 1 ? TrainMode::triplet : TrainMode::siamese;
    m.seed = r.u64();
    m.epochs_completed = r.u32();

    BackboneConfig c;
    c.input_size = static_cast<int>(r.u32());
    c.input_channels = static_cast<int>(r.u32());
    const uint32_t n_convs = r.u32();
    c.convs.clear();
    for (uint32_t i = 0; i < n_convs; ++i) {
        const int oc = static_cast<int>(r.u32());
        const int k = static_cast<int>(r.u32());
        c.convs.push_back({oc, k});
    }
    c.embedding_dim = static_cast<int>(r.u32());
    c.triplet_head_dim = static_cast<int>(r.u32());
    c.include_triplet_head = r.u8() == 1;

    // rebuild the parameter structure, then overwrite values from the file
    m.backbone = build_backbone(c, 0);
    const uint32_t n_tensors = r.u32();
    if (n_tensors != m.backbone.params.size())
        throw IoError("checkpoint tensor count " + std::to_string(n_tensors) + " does not match topology: " + path);
    for (uint32_t t = 0; t < n_tensors; ++t) {
        const uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        Parameter* p = m.backbone.params.find(name);
        if (!p) throw IoError("checkpoint has unknown tensor '" + name + "': " + path);
        const uint32_t ndim = r.u32();
        std::vector<int> shape;
        for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(r.u32()));
        if (shape != p->value.shape())
            throw IoError("checkpoint tensor '" + name + "' shape " + shape_to_string(shape) +
                          " does not match topology " + p->value.shape_str() + ": " + path);
        for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = r.f32();
    }
    return m;
}

void write_embeddings(const std::string& path, const EmbeddingIndex& index) {
    Writer w;
    w.magic(kEmbeddingsMagic);
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(index.size()));
    w.u32(static_cast<uint32_t>(index.dim));
    for (const EmbeddingEntry& e : index.entries) {
        w.u16(static_cast<uint16_t>(e.id.size()));
        w.bytes(e.id.data(), e.id.size());
        w.u8(static_cast<uint8_t>(category_numeral(e.category)));
        for (float v : e.vec) w.f32(v);
    }
    w.to_file(path);
}

EmbeddingIndex read_embeddings(const std::string& path) {
    Reader r(path);
    r.expect_magic(kEmbeddingsMagic, "embeddings");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("unsupported embeddings version " + std::to_string(version) + ": " + path);

    EmbeddingIndex index;
    const uint32_t count = r.u32();
    index.dim = static_cast<int>(r.u32());
    index.entries.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        EmbeddingEntry& e = index.entries[i];
        const uint16_t id_len = r.u16();
        e.id = r.str(id_len);
        e.category = category_from_numeral(static_cast<int>(r.u8()));
        e.vec.resize(static_cast<size_t>(index.dim));
        for (float& v : e.vec) v = r.f32();
    }
    if (!r.exhausted()) throw IoError("trailing bytes in embeddings file: " + path);
    return index;
}

size_t embeddings_file_size(const EmbeddingIndex& index) {
    size_t n = 16;  // magic + version + count + dim
    for (const EmbeddingEntry& e : index.entries) n += 2 + e.id.size() + 1 + 4 * static_cast<size_t>(index.dim);
    return n;
}

}  // namespace oneshot
