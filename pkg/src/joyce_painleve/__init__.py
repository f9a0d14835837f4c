"""Joyce structures attached to the Painleve I, II and III3 isomonodromy families."""
from .errors import (Blowup, ConfigError, DegenerateInput, DenominatorZero, FamilyMismatch,
                     FitRejected, GaugeSingular, JacobianSingular, JoyceError, LatticePoint,
                     NoConvergence, NonConvergence, NoPoleInSpan, OffCurve, OffLagrangian,
                     PoleHit, SheetSingular, SingularCurve, StepUnderflow)
from .families import BasePoint, FamilyId, FiberPoint
from .numerics import (Tolerances, contour_derivative, fd_derivative, ode_integrate, polygon,
                       quad_path)
from .elliptic import EllipticData, abel_map, elliptic_data, weierstrass_eval
from .spectral import (bilinear_pairing, branch_points, cycle_basis, period, period_matrix,
                       z_coords)
from .isomonodromy import (FlowControls, FlowField, PoleFit, Trajectory,
                           apparent_singularity_residual, flow_field, integrate_flow,
                           oper_potential, pole_fit, zero_curvature_residual)
from .joyce import (CanonicalChart, ThetaCoords, euler_rescale, heavenly_residual,
                    involution_piii, joyce_connection, k_second_derivatives,
                    k_third_derivatives, k_third_derivatives_fd, plebanski_w,
                    plebanski_w_general, prepotential_s, theta_inverse, theta_map,
                    vertical_fields)
from .tau import (DLogTau, OneForm, TauSample, TauZeroMatch, TwoForm, dlogtau, omega_forms,
                  tau_along_flow, tau_trajectory, tau_zero_pole_match, theta_potentials)

__version__ = "0.1.0"
