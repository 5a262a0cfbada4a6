#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace bsdn {

template <typename T>
struct Vec3 {
    std::array<T, 3> v{};
    T& operator[](int i) { return v[static_cast<size_t>(i)]; }
    T operator[](int i) const { return v[static_cast<size_t>(i)]; }
    Vec3 operator+(const Vec3& o) const { return {{v[0] + o.v[0], v[1] + o.v[1], v[2] + o.v[2]}}; }
    Vec3 operator-(const Vec3& o) const { return {{v[0] - o.v[0], v[1] - o.v[1], v[2] - o.v[2]}}; }
    Vec3 operator*(T s) const { return {{v[0] * s, v[1] * s, v[2] * s}}; }
    T dot(const Vec3& o) const { return v[0] * o.v[0] + v[1] * o.v[1] + v[2] * o.v[2]; }
};

// Row-major 3x3.
template <typename T>
struct Mat3 {
    std::array<T, 9> m{};
    T& operator()(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
    T operator()(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }

    static Mat3 identity(T s = T(1)) {
        Mat3 a;
        a(0, 0) = a(1, 1) = a(2, 2) = s;
        return a;
    }
    static Mat3 diag(const Vec3<T>& d) {
        Mat3 a;
        a(0, 0) = d[0];
        a(1, 1) = d[1];
        a(2, 2) = d[2];
        return a;
    }
    static Mat3 outer(const Vec3<T>& a, const Vec3<T>& b) {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
        return r;
    }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator-(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
        return r;
    }
    Mat3 operator*(T s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    Vec3<T> operator*(const Vec3<T>& x) const {
        Vec3<T> r;
        for (int i = 0; i < 3; ++i) r[i] = (*this)(i, 0) * x[0] + (*this)(i, 1) * x[1] + (*this)(i, 2) * x[2];
        return r;
    }
    Mat3 matmul(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                T s = T(0);
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transpose() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    T trace() const { return m[0] + m[4] + m[8]; }
};

// Cholesky L*L^T of a symmetric matrix, with the diagonal of L floored at
// `floor_diag` so nearly/indefinite inputs still produce a usable factor.
// Returns the number of floored pivots (0 = clean SPD factorization).
template <typename T>
int cholesky33(const Mat3<T>& a, Mat3<T>& L, T floor_diag) {
    int floored = 0;
    const T fl2 = floor_diag * floor_diag;
    L = Mat3<T>{};

    T d0 = a(0, 0);
    if (!(d0 > fl2)) {
        d0 = fl2;
        ++floored;
    }
    L(0, 0) = std::sqrt(d0);
    L(1, 0) = a(1, 0) / L(0, 0);
    L(2, 0) = a(2, 0) / L(0, 0);

    T d1 = a(1, 1) - L(1, 0) * L(1, 0);
    if (!(d1 > fl2)) {
        d1 = fl2;
        ++floored;
    }
    L(1, 1) = std::sqrt(d1);
    L(2, 1) = (a(2, 1) - L(2, 0) * L(1, 0)) / L(1, 1);

    T d2 = a(2, 2) - L(2, 0) * L(2, 0) - L(2, 1) * L(2, 1);
    if (!(d2 > fl2)) {
        d2 = fl2;
        ++floored;
    }
    L(2, 2) = std::sqrt(d2);
    return floored;
}

template <typename T>
Vec3<T> chol_solve(const Mat3<T>& L, const Vec3<T>& b) {
    Vec3<T> y, x;
    y[0] = b[0] / L(0, 0);
    y[1] = (b[1] - L(1, 0) * y[0]) / L(1, 1);
    y[2] = (b[2] - L(2, 0) * y[0] - L(2, 1) * y[1]) / L(2, 2);
    x[2] = y[2] / L(2, 2);
    x[1] = (y[1] - L(2, 1) * x[2]) / L(1, 1);
    x[0] = (y[0] - L(1, 0) * x[1] - L(2, 0) * x[2]) / L(0, 0);
    return x;
}

template <typename T>
T chol_logdet(const Mat3<T>& L) {
    return T(2) * (std::log(L(0, 0)) + std::log(L(1, 1)) + std::log(L(2, 2)));
}

template <typename T>
Mat3<T> chol_inverse(const Mat3<T>& L) {
    // columns of the inverse by solving L L^T x = e_i
    Mat3<T> inv;
    for (int i = 0; i < 3; ++i) {
        Vec3<T> e;
        e[i] = T(1);
        Vec3<T> x = chol_solve(L, e);
        for (int r = 0; r < 3; ++r) inv(r, i) = x[r];
    }
    // enforce exact symmetry against rounding
    for (int r = 0; r < 3; ++r)
        for (int c = r + 1; c < 3; ++c) {
            T s = (inv(r, c) + inv(c, r)) / T(2);
            inv(r, c) = s;
            inv(c, r) = s;
        }
    return inv;
}

}  // namespace bsdn
