#include <cstdlib>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "glow/core/tensor.hpp"

namespace glow::detail {

namespace {
struct Pool {
    std::mutex mu;
    std::unordered_map<size_t, std::vector<double*>> free_lists;
    ~Pool() {
        for (auto& [n, list] : free_lists)
            for (double* p : list) ::free(p);
    }
};
Pool& pool() {
    static Pool* p = new Pool;  // leaked on purpose; outlives all tensors
    return *p;
}
}  // namespace

double* pool_acquire(size_t n) {
    if (n == 0) return nullptr;
    {
        Pool& pl = pool();
        std::lock_guard<std::mutex> lock(pl.mu);
        auto it = pl.free_lists.find(n);
        if (it != pl.free_lists.end() && !it->second.empty()) {
            double* p = it->second.back();
            it->second.pop_back();
            return p;
        }
    }
    void* raw = nullptr;
    if (posix_memalign(&raw, 64, n * sizeof(double)) != 0) throw std::bad_alloc();
    return static_cast<double*>(raw);
}

void pool_release(double* p, size_t n) {
    if (!p) return;
    Pool& pl = pool();
    std::lock_guard<std::mutex> lock(pl.mu);
    pl.free_lists[n].push_back(p);
}

}  // namespace glow::detail
