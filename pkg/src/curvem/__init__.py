"""Mixed virtual elements for Darcy flow on polyhedral meshes with curved faces.

Modules
-------
mesh        polyhedral meshes with charted faces and the test families
face_maps   face charts (affine, bilinear, cylinder, sine graph)
poly        scaled monomials and the gradient/cross split of vector polynomials
quadrature  face, volume and compressed quadrature rules
vem         local degrees of freedom, projector and stabilization
darcy       assembly, solution and post-processing of the mixed problem
checks      named invariant checks
cli         command-line entry points
"""

__version__ = "0.1.0"
