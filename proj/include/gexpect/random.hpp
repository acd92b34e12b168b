#pragma once

// Seeding rules.  Sample i of a seeded run belongs to block i / kSampleBlock;
// each block owns an mt19937_64 seeded with sub_seed(seed, block) and draws
// its samples in order.  Results therefore depend on (seed, i) only, never on
// how blocks are spread over workers.

#include <cstddef>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace gexpect {

inline constexpr std::size_t kSampleBlock = 1024;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// (seed, worker-index) -> sub-seed.
constexpr std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index)
{
    return mix64(seed ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline std::size_t block_count(std::size_t n) { return (n + kSampleBlock - 1) / kSampleBlock; }

class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return dist_(engine_); }

    template <class Derived>
    void fill(Derived&& v)
    {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v(i) = dist_(engine_);
        }
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

} // namespace gexpect
