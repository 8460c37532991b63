#pragma once

// Umbrella header: the full library in dependency order.

#include <mdtree/psd.hpp>
#include <mdtree/tree.hpp>
#include <mdtree/objective.hpp>
#include <mdtree/solver.hpp>
#include <mdtree/scheme.hpp>
#include <mdtree/oracle.hpp>
#include <mdtree/json_io.hpp>
#include <mdtree/report.hpp>
