#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <fftw3.h>

#include "metadiv/cppn.hpp"
#include "metadiv/errors.hpp"
#include "metadiv/field.hpp"

namespace metadiv {

enum class ConvBackend { direct, fft };

inline ConvBackend conv_backend_from_string(const std::string& s) {
  if (s == "direct") return ConvBackend::direct;
  if (s == "fft") return ConvBackend::fft;
  throw ConfigMismatch("unknown convolution backend: " + s);
}

inline void check_kernel_fits(const Field3& f, const Kernel& k) {
  if (2 * k.rx + 1 > f.sx || 2 * k.ry + 1 > f.sy || 2 * k.rz + 1 > f.sz)
    throw KernelTooLarge("kernel box exceeds grid");
}

// ---------------------------------------------------------------------------
// Direct path: circular correlation out(p) = sum_o k(o) f(p+o), o in
// [-R, R]^3. The wrap is resolved once into a halo-padded copy; the inner
// loops are then dense. Per output cell the summation order is a fixed scan
// of the kernel box, independent of the cell position, which makes torus
// translation equivariance bit-exact.
// ---------------------------------------------------------------------------

inline Field3 convolve_torus(const Field3& f, const Kernel& k) {
  check_kernel_fits(f, k);
  const int rx = k.rx, ry = k.ry, rz = k.rz;
  const int px = f.sx + 2 * rx, py = f.sy + 2 * ry, pz = f.sz + 2 * rz;

  std::vector<double> pad(static_cast<std::size_t>(px) * py * pz);
  for (int z = 0; z < pz; ++z) {
    int fz = wrap(z - rz, f.sz);
    for (int y = 0; y < py; ++y) {
      int fy = wrap(y - ry, f.sy);
      std::size_t row = (static_cast<std::size_t>(z) * py + y) * px;
      std::size_t frow = f.index(0, fy, fz);
      for (int x = 0; x < px; ++x)
        pad[row + static_cast<std::size_t>(x)] = f.data[frow + static_cast<std::size_t>(wrap(x - rx, f.sx))];
    }
  }

  const int kx = 2 * rx + 1, ky = 2 * ry + 1, kz = 2 * rz + 1;
  Field3 out(f.sx, f.sy, f.sz);
  for (int z = 0; z < f.sz; ++z)
    for (int y = 0; y < f.sy; ++y)
      for (int x = 0; x < f.sx; ++x) {
        double acc = 0.0;
        for (int oz = 0; oz < kz; ++oz)
          for (int oy = 0; oy < ky; ++oy) {
            std::size_t prow = (static_cast<std::size_t>(z + oz) * py + (y + oy)) * px +
                               static_cast<std::size_t>(x);
            std::size_t krow = k.weights.index(0, oy, oz);
            for (int ox = 0; ox < kx; ++ox)
              acc += k.weights.data[krow + static_cast<std::size_t>(ox)] *
                     pad[prow + static_cast<std::size_t>(ox)];
          }
        out.at(x, y, z) = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// FFT path. Optional fast route for rollouts; must agree with the direct
// path within the acceptance tolerance. FFTW_ESTIMATE planning is
// heuristic-only, so plan choice (and thus the arithmetic) is reproducible
// run to run on a given machine.
// ---------------------------------------------------------------------------

// Half-complex spectrum of a real field (sz * sy * (sx/2+1) bins).
struct FieldSpectrum {
  std::vector<std::complex<double>> bins;
};

class FftConvolver {
 public:
  FftConvolver(int sx, int sy, int sz) : sx_(sx), sy_(sy), sz_(sz) {
    nbins_ = static_cast<std::size_t>(sz_) * sy_ * (sx_ / 2 + 1);
    real_ = fftw_alloc_real(static_cast<std::size_t>(sx_) * sy_ * sz_);
    complex_ = fftw_alloc_complex(nbins_);
    // FFTW is row-major with the last dimension fastest; fields are
    // x-fastest, so the transform dims are (sz, sy, sx).
    forward_ = fftw_plan_dft_r2c_3d(sz_, sy_, sx_, real_, complex_, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_3d(sz_, sy_, sx_, complex_, real_, FFTW_ESTIMATE);
  }

  ~FftConvolver() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(real_);
    fftw_free(complex_);
  }

  FftConvolver(const FftConvolver&) = delete;
  FftConvolver& operator=(const FftConvolver&) = delete;

  FieldSpectrum forward(const Field3& f) {
    std::copy(f.data.begin(), f.data.end(), real_);
    fftw_execute(forward_);
    FieldSpectrum s;
    s.bins.resize(nbins_);
    for (std::size_t i = 0; i < nbins_; ++i) s.bins[i] = {complex_[i][0], complex_[i][1]};
    return s;
  }

  // Conjugated spectrum of the kernel, zero-padded to the grid and wrapped
  // so offset o lands at index (o mod S). Pointwise multiplication by this
  // then yields circular correlation.
  FieldSpectrum kernel_spectrum(const Kernel& k) {
    Field3 padded(sx_, sy_, sz_);
    for (int oz = -k.rz; oz <= k.rz; ++oz)
      for (int oy = -k.ry; oy <= k.ry; ++oy)
        for (int ox = -k.rx; ox <= k.rx; ++ox)
          padded.at(wrap(ox, sx_), wrap(oy, sy_), wrap(oz, sz_)) =
              k.weights.at(ox + k.rx, oy + k.ry, oz + k.rz);
    FieldSpectrum s = forward(padded);
    for (auto& b : s.bins) b = std::conj(b);
    return s;
  }

  Field3 correlate(const FieldSpectrum& field_spec, const FieldSpectrum& kernel_spec) {
    const double scale = 1.0 / (static_cast<double>(sx_) * sy_ * sz_);
    for (std::size_t i = 0; i < nbins_; ++i) {
      std::complex<double> v = field_spec.bins[i] * kernel_spec.bins[i];
      complex_[i][0] = v.real();
      complex_[i][1] = v.imag();
    }
    fftw_execute(backward_);
    Field3 out(sx_, sy_, sz_);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = real_[i] * scale;
    return out;
  }

  Field3 convolve(const Field3& f, const Kernel& k) {
    check_kernel_fits(f, k);
    return correlate(forward(f), kernel_spectrum(k));
  }

 private:
  int sx_, sy_, sz_;
  std::size_t nbins_;
  double* real_;
  fftw_complex* complex_;
  fftw_plan forward_;
  fftw_plan backward_;
};

}  // namespace metadiv
