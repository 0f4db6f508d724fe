#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>

#include "bgcrack/ops.hpp"

namespace bgcrack {

namespace {

using detail::TensorImpl;
using detail::make_result;

// FFTW planning is not thread-safe, and plans are reused with their own
// scratch buffers, so every transform goes through one lock.
class FftPlans {
public:
    static FftPlans& instance() {
        static FftPlans plans;
        return plans;
    }

    // Half spectrum of a real plane: out holds h * (w/2+1) bins.
    void forward(int h, int w, const double* in, std::complex<double>* out) {
        std::lock_guard lock(mutex_);
        Entry& e = entry(h, w);
        std::copy_n(in, static_cast<std::size_t>(h) * w, e.real);
        fftw_execute(e.r2c);
        const auto* src = reinterpret_cast<const std::complex<double>*>(e.half);
        std::copy_n(src, static_cast<std::size_t>(h) * (w / 2 + 1), out);
    }

    // Real part of the unnormalized inverse DFT of a full spectrum whose
    // columns beyond w/2 are zero; `in` holds the h * (w/2+1) leading bins.
    void inverse_real(int h, int w, const std::complex<double>* in, double* out) {
        std::lock_guard lock(mutex_);
        Entry& e = entry(h, w);
        const int wh = w / 2 + 1;
        auto* full = reinterpret_cast<std::complex<double>*>(e.full);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) full[i * w + j] = j < wh ? in[i * wh + j] : std::complex<double>{};
        fftw_execute(e.c2c_inv);
        const auto* res = reinterpret_cast<const std::complex<double>*>(e.full_out);
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) out[i] = res[i].real();
    }

private:
    struct Entry {
        double* real = nullptr;
        fftw_complex* half = nullptr;
        fftw_complex* full = nullptr;
        fftw_complex* full_out = nullptr;
        fftw_plan r2c = nullptr;
        fftw_plan c2c_inv = nullptr;
    };

    Entry& entry(int h, int w) {
        auto it = plans_.find({h, w});
        if (it != plans_.end()) return it->second;
        Entry e;
        const std::size_t n = static_cast<std::size_t>(h) * w;
        e.real = fftw_alloc_real(n);
        e.half = fftw_alloc_complex(static_cast<std::size_t>(h) * (w / 2 + 1));
        e.full = fftw_alloc_complex(n);
        e.full_out = fftw_alloc_complex(n);
        e.r2c = fftw_plan_dft_r2c_2d(h, w, e.real, e.half, FFTW_ESTIMATE);
        e.c2c_inv = fftw_plan_dft_2d(h, w, e.full, e.full_out, FFTW_BACKWARD, FFTW_ESTIMATE);
        if (!e.r2c || !e.c2c_inv) throw std::runtime_error("fftw: failed to plan " + std::to_string(h) + "x" + std::to_string(w));
        return plans_.emplace(std::make_pair(h, w), e).first->second;
    }

    ~FftPlans() {
        for (auto& [key, e] : plans_) {
            fftw_destroy_plan(e.r2c);
            fftw_destroy_plan(e.c2c_inv);
            fftw_free(e.real);
            fftw_free(e.half);
            fftw_free(e.full);
            fftw_free(e.full_out);
        }
    }

    std::mutex mutex_;
    std::map<std::pair<int, int>, Entry> plans_;
};

// Multiplicity of half-spectrum column j inside the full spectrum.
inline double column_weight(int j, int w) { return (j == 0 || (w % 2 == 0 && j == w / 2)) ? 1.0 : 2.0; }

// Per-plane rfft2 of a flat [planes, h, w] buffer into split re/im buffers.
void rfft2_planes(const double* x, int planes, int h, int w, double* re, double* im) {
    const int wh = w / 2 + 1;
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(h) * wh);
    for (int p = 0; p < planes; ++p) {
        FftPlans::instance().forward(h, w, x + static_cast<std::size_t>(p) * h * w, spec.data());
        for (std::size_t i = 0; i < spec.size(); ++i) {
            re[p * spec.size() + i] = spec[i].real();
            im[p * spec.size() + i] = spec[i].imag();
        }
    }
}

// out = Re(sum over half-spectrum bins of weight_j * (re + i im) e^{+i phase}) * factor
void inverse_planes(const double* re, const double* im, int planes, int h, int w, bool column_weights, double factor,
                    double* out) {
    const int wh = w / 2 + 1;
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(h) * wh);
    std::vector<double> plane(static_cast<std::size_t>(h) * w);
    for (int p = 0; p < planes; ++p) {
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wh; ++j) {
                const std::size_t k = static_cast<std::size_t>(p) * h * wh + i * wh + j;
                const double cw = column_weights ? column_weight(j, w) : 1.0;
                spec[i * wh + j] = {cw * re[k], cw * im[k]};
            }
        FftPlans::instance().inverse_real(h, w, spec.data(), plane.data());
        for (std::size_t i = 0; i < plane.size(); ++i) out[p * plane.size() + i] += factor * plane[i];
    }
}

}  // namespace

std::pair<Tensor, Tensor> rfft2(const Tensor& x) {
    if (!x.defined() || x.rank() != 4) throw std::invalid_argument("rfft2: expected NCHW tensor");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int wh = w / 2 + 1;
    const int planes = n * c;
    const std::size_t sz = static_cast<std::size_t>(planes) * h * wh;
    std::vector<double> re(sz), im(sz);
    rfft2_planes(x.data().data(), planes, h, w, re.data(), im.data());

    // Adjoint of the half-spectrum DFT: the real part of the unnormalized
    // inverse transform of the zero-extended gradient spectrum.
    auto px = x.impl_ptr();
    auto backward_part = [px, planes, h, w](TensorImpl& self, bool imag_part) {
        std::vector<double> zeros(self.grad.size(), 0.0);
        const double* gre = imag_part ? zeros.data() : self.grad.data();
        const double* gim = imag_part ? self.grad.data() : zeros.data();
        inverse_planes(gre, gim, planes, h, w, false, 1.0, px->grad_buffer().data());
    };
    Tensor tre = make_result({n, c, h, wh}, std::move(re), {x},
                             [backward_part](TensorImpl& self) { backward_part(self, false); });
    Tensor tim = make_result({n, c, h, wh}, std::move(im), {x},
                             [backward_part](TensorImpl& self) { backward_part(self, true); });
    return {tre, tim};
}

Tensor irfft2(const Tensor& re, const Tensor& im, int height, int width) {
    if (!re.defined() || !im.defined() || re.rank() != 4 || re.shape() != im.shape())
        throw std::invalid_argument("irfft2: real and imaginary parts must be matching NCHW tensors");
    if (re.dim(2) != height || re.dim(3) != width / 2 + 1)
        throw std::invalid_argument("irfft2: spectrum " + shape_str(re.shape()) + " inconsistent with " +
                                    std::to_string(height) + "x" + std::to_string(width));
    const int n = re.dim(0), c = re.dim(1);
    const int planes = n * c;
    const double norm = 1.0 / (static_cast<double>(height) * width);
    std::vector<double> out(static_cast<std::size_t>(planes) * height * width, 0.0);
    inverse_planes(re.data().data(), im.data().data(), planes, height, width, true, norm, out.data());

    auto pre = re.impl_ptr();
    auto pim = im.impl_ptr();
    return make_result({n, c, height, width}, std::move(out), {re, im}, [pre, pim, planes, height, width, norm](TensorImpl& self) {
        const int wh = width / 2 + 1;
        const std::size_t sz = static_cast<std::size_t>(planes) * height * wh;
        std::vector<double> gre(sz), gim(sz);
        rfft2_planes(self.grad.data(), planes, height, width, gre.data(), gim.data());
        for (int p = 0; p < planes; ++p)
            for (int i = 0; i < height; ++i)
                for (int j = 0; j < wh; ++j) {
                    const std::size_t k = static_cast<std::size_t>(p) * height * wh + i * wh + j;
                    const double f = norm * column_weight(j, width);
                    if (pre->requires_grad) pre->grad_buffer()[k] += f * gre[k];
                    if (pim->requires_grad) pim->grad_buffer()[k] += f * gim[k];
                }
    });
}

}  // namespace bgcrack
