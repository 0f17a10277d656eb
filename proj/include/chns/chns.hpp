#ifndef CHNS_CHNS_HPP
#define CHNS_CHNS_HPP

#include "chns/errors.hpp"
#include "chns/fespace.hpp"
#include "chns/forms.hpp"
#include "chns/io.hpp"
#include "chns/mesh.hpp"
#include "chns/quadrature.hpp"
#include "chns/sim.hpp"
#include "chns/solver.hpp"
#include "chns/system.hpp"

#endif
