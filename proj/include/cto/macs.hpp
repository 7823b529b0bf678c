#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cto::macs {

// Multiply-accumulate counter. Compute kernels report the exact work their
// loops execute (taken from the loop bounds of the running kernel, not from
// a layer-level formula), tallied under the current scope stack. Disabled by
// default; a null active counter costs one branch per kernel call.
class MacCounter {
  public:
    std::uint64_t total = 0;
    std::map<std::string, std::uint64_t> by_scope;

    void add(std::uint64_t n) {
        total += n;
        if (!scopes_.empty()) by_scope[scopes_.back()] += n;
    }

    void push_scope(const std::string& name) {
        scopes_.push_back(scopes_.empty() ? name : scopes_.back() + "." + name);
    }
    void pop_scope() { scopes_.pop_back(); }

    std::uint64_t scoped(const std::string& name) const {
        auto it = by_scope.find(name);
        return it == by_scope.end() ? 0 : it->second;
    }

  private:
    std::vector<std::string> scopes_;
};

// Forward/backward on a model instance are single-threaded by contract, so a
// plain global suffices.
inline MacCounter* g_active = nullptr;

inline void add(std::uint64_t n) {
    if (g_active) g_active->add(n);
}
inline bool enabled() { return g_active != nullptr; }

// RAII activation of a counter.
class CountingSession {
  public:
    explicit CountingSession(MacCounter& c) : prev_(g_active) { g_active = &c; }
    ~CountingSession() { g_active = prev_; }
    CountingSession(const CountingSession&) = delete;
    CountingSession& operator=(const CountingSession&) = delete;

  private:
    MacCounter* prev_;
};

class ScopeGuard {
  public:
    explicit ScopeGuard(const std::string& name) : active_(g_active != nullptr) {
        if (active_) g_active->push_scope(name);
    }
    ~ScopeGuard() {
        if (active_) g_active->pop_scope();
    }
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

  private:
    bool active_;
};

} // namespace cto::macs
