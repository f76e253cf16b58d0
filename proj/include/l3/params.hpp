#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "l3/rng.hpp"
#include "l3/tensor.hpp"

namespace l3 {

// Declarative description of a parameter collection. init_params() consumes
// it; the entry order fixes the checkpoint layout.
struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    bool trainable = true;
    // fan_in > 0: weight, U(-1/sqrt(fan_in), 1/sqrt(fan_in)). fan_in == 0: zeros (bias).
    int fan_in = 0;
};

struct ArchitectureSpec {
    std::vector<ParamSpec> params;

    void weight(const std::string& name, std::vector<int> shape, int fan_in) {
        params.push_back({name, std::move(shape), true, fan_in});
    }
    void bias(const std::string& name, std::vector<int> shape) {
        params.push_back({name, std::move(shape), true, 0});
    }
};

// Named, shaped parameter collection over one flat buffer. Shapes are fixed
// at construction; the trainable flag partitions entries for the optimizer.
template <class T>
class ParameterStore {
public:
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
        std::size_t size = 0;
        bool trainable = true;
    };

    ParameterStore() = default;

    void add(const std::string& name, std::vector<int> shape, bool trainable) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.shape = std::move(shape);
        e.size = Tensor<T>::count(e.shape);
        e.offset = data_.size();
        e.trainable = trainable;
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
        data_.resize(data_.size() + entries_.back().size, T(0));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return entries_[it->second];
    }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    std::size_t entry_count() const { return entries_.size(); }

    std::span<T> view(const std::string& name) {
        const Entry& e = entry(name);
        return {data_.data() + e.offset, e.size};
    }
    std::span<const T> view(const std::string& name) const {
        const Entry& e = entry(name);
        return {data_.data() + e.offset, e.size};
    }

    T* ptr(const std::string& name) { return data_.data() + entry(name).offset; }
    const T* ptr(const std::string& name) const { return data_.data() + entry(name).offset; }

    std::vector<T>& flat() { return data_; }
    const std::vector<T>& flat() const { return data_; }
    std::size_t total_size() const { return data_.size(); }

    void set_trainable(const std::string& name, bool trainable) {
        entries_[index_.at(name)].trainable = trainable;
    }

    std::size_t trainable_size() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.size;
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    // Maps a flat offset back to "name[idx]" for diagnostics.
    std::string locate(std::size_t flat_index) const {
        for (const auto& e : entries_)
            if (flat_index >= e.offset && flat_index < e.offset + e.size)
                return e.name + "[" + std::to_string(flat_index - e.offset) + "]";
        return "<out of range>";
    }

    template <class U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.shape, e.trainable);
        for (std::size_t i = 0; i < data_.size(); ++i) out.flat()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<T> data_;
};

// Deterministic given (spec, seed): each tensor is filled from a stream
// derived from the seed and the tensor name, so entry order does not leak
// into the values.
template <class T>
ParameterStore<T> init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
    ParameterStore<T> store;
    for (const auto& p : spec.params) store.add(p.name, p.shape, p.trainable);
    for (const auto& p : spec.params) {
        auto v = store.view(p.name);
        if (p.fan_in <= 0) continue;  // biases stay zero
        Rng rng(hash_combine(seed, fnv1a(p.name.c_str())));
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    return store;
}

// Gradient buffer aligned with a store's flat layout. `provided` tracks which
// entries a training step filled, so the optimizer can enforce its contract.
template <class T>
struct GradientSet {
    std::vector<T> flat;
    std::vector<char> provided;  // per entry index

    template <class U>
    explicit GradientSet(const ParameterStore<U>& store)
        : flat(store.total_size(), T(0)), provided(store.entry_count(), 0) {}

    void clear() {
        std::fill(flat.begin(), flat.end(), T(0));
        std::fill(provided.begin(), provided.end(), 0);
    }

    template <class U>
    void mark_trainable(const ParameterStore<U>& store) {
        for (std::size_t i = 0; i < store.entry_count(); ++i)
            provided[i] = store.entry(i).trainable ? 1 : 0;
    }
};

}  // namespace l3
