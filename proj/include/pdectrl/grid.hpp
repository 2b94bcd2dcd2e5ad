#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace pdectrl {

// Uniform tensor-product grid on [a,b]^ndim with n points per axis
// (boundary included), so h = (b-a)/(n-1).
struct Grid {
    int ndim = 2;
    int n = 0;
    double a = 0.0;
    double b = 1.0;

    double h() const { return (b - a) / (n - 1); }
    double coord(int i) const { return a + i * h(); }
    int num_points() const {
        int p = n;
        for (int d = 1; d < ndim; ++d) p *= n;
        return p;
    }
    // Integration weight of the rectangle rule on interior cells.
    double cell_volume() const {
        double v = h();
        for (int d = 1; d < ndim; ++d) v *= h();
        return v;
    }
    bool operator==(const Grid&) const = default;
};

Grid make_grid_1d(int n, double a = 0.0, double b = 1.0);
Grid make_grid_2d(int n, double a = 0.0, double b = 1.0);

struct Field {
    Grid grid;
    std::vector<double> values;  // row-major (y, x) in 2D

    Field() = default;
    explicit Field(const Grid& g) : grid(g), values(static_cast<size_t>(g.num_points()), 0.0) {}

    double& at(int i) { return values[static_cast<size_t>(i)]; }
    double at(int i) const { return values[static_cast<size_t>(i)]; }
    double& at(int iy, int ix) { return values[static_cast<size_t>(iy) * grid.n + ix]; }
    double at(int iy, int ix) const { return values[static_cast<size_t>(iy) * grid.n + ix]; }

    void zero_boundary();
    bool is_boundary(int flat_index) const;
};

// Samples f(x) or f(x,y) on the grid.
Field sample_field(const Grid& g, const std::function<double(double)>& f);
Field sample_field(const Grid& g, const std::function<double(double, double)>& f);

// Discrete L2 norm sqrt(h^d * sum v^2) and friends.
double norm_l2(const Field& f);
double dot_l2(const Field& f, const Field& g);
double norm_linf(const Field& f);
// ||a - b||_2 / ||b||_2 (any consistent norm; weights cancel).
double rel_error(const Field& a, const Field& b);
double rel_error(std::span<const double> a, std::span<const double> b);

Field operator+(const Field& a, const Field& b);
Field operator-(const Field& a, const Field& b);
Field operator*(double c, const Field& a);

// Deterministic uniform RNG used throughout; the bit stream depends only on
// the seed, never on the platform's distribution implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}
    uint64_t next_u64() { return eng_(); }
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform01(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace pdectrl
