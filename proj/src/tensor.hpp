#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace oneshot {

/// std::vector that default-initializes (skips zeroing) on resize. Tensor
/// zero-fills explicitly where the contract needs it; fully-overwritten
/// scratch skips the memset.
template <typename T>
struct default_init_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    template <typename U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

using FloatBuffer = std::vector<float, default_init_allocator<float>>;

/// Dense row-major float32 array with an explicit shape.
/// Invariant: data().size() == product of shape dimensions, all dims > 0.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    /// Allocation without the zero-fill; contents unspecified. Only for
    /// buffers the caller overwrites completely.
    static Tensor uninit(std::vector<int> shape);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    void fill(float v);
    void zero() { fill(0.0f); }
    bool all_finite() const;

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<int> shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    FloatBuffer data_;
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace oneshot
