//! Minimal reverse-mode autodiff: a tape of dense 2-D f64 tensors with just
//! the operations the GRU sequence VAE needs. Nodes are created in
//! topological order, so the backward pass is a single reverse sweep.
//!
//! Shape violations are programmer errors and panic; numerical problems
//! surface through the values themselves and are checked by callers.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "not a scalar tensor");
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// matrix + row vector, broadcast over rows.
    AddRowBroadcast(usize, usize),
    Hadamard(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    ScaleConst(usize, f64),
    /// The constant itself is not stored: d(x + c)/dx = 1.
    AddConst(usize),
    ConcatCols(usize, usize),
    /// Row gather from a table; backward scatter-adds.
    Gather(usize, Vec<usize>),
    /// mu + exp(0.5 * logvar) * eps with a fixed noise tensor.
    Reparam { mu: usize, logvar: usize, eps: Tensor },
    /// Batch-mean KL(N(mu, sigma^2) || N(0, I)), a 1x1 tensor.
    GaussKl { mu: usize, logvar: usize },
    /// Batch-mean cross-entropy of row-wise softmax restricted to
    /// `lo..hi`; logits outside the range get exactly zero probability.
    MaskedCrossEntropy { logits: usize, targets: Vec<usize>, lo: usize, hi: usize },
    /// Sum of all elements, a 1x1 tensor.
    SumAll(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient tape. Build the computation through the methods, then call
/// `backward` on a scalar node to get gradients for every node.
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> usize {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, t: Tensor) -> usize {
        self.push(Op::Leaf, t)
    }

    pub fn matmul(&mut self, a: usize, b: usize) -> usize {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(x.same_shape(y), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::Add(a, b), value)
    }

    pub fn add_row_broadcast(&mut self, mat: usize, row: usize) -> usize {
        let (m, r) = (&self.nodes[mat].value, &self.nodes[row].value);
        assert_eq!(r.rows, 1, "broadcast row must be 1 x cols");
        assert_eq!(m.cols, r.cols, "broadcast width mismatch");
        let mut value = m.clone();
        for i in 0..value.rows {
            for j in 0..value.cols {
                value.data[i * value.cols + j] += r.data[j];
            }
        }
        self.push(Op::AddRowBroadcast(mat, row), value)
    }

    pub fn hadamard(&mut self, a: usize, b: usize) -> usize {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(x.same_shape(y), "hadamard shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::Hadamard(a, b), value)
    }

    pub fn sigmoid(&mut self, a: usize) -> usize {
        let x = &self.nodes[a].value;
        let data = x.data.iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: usize) -> usize {
        let x = &self.nodes[a].value;
        let data = x.data.iter().map(|&v| v.tanh()).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::Tanh(a), value)
    }

    pub fn scale_const(&mut self, a: usize, c: f64) -> usize {
        let x = &self.nodes[a].value;
        let data = x.data.iter().map(|&v| v * c).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::ScaleConst(a, c), value)
    }

    pub fn add_const(&mut self, a: usize, c: f64) -> usize {
        let x = &self.nodes[a].value;
        let data = x.data.iter().map(|&v| v + c).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::AddConst(a), value)
    }

    pub fn concat_cols(&mut self, a: usize, b: usize) -> usize {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.rows, y.rows, "concat_cols row mismatch");
        let mut value = Tensor::zeros(x.rows, x.cols + y.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                value.data[i * value.cols + j] = x.data[i * x.cols + j];
            }
            for j in 0..y.cols {
                value.data[i * value.cols + x.cols + j] = y.data[i * y.cols + j];
            }
        }
        self.push(Op::ConcatCols(a, b), value)
    }

    pub fn gather(&mut self, table: usize, indices: Vec<usize>) -> usize {
        let t = &self.nodes[table].value;
        let mut value = Tensor::zeros(indices.len(), t.cols);
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < t.rows, "gather index {idx} out of {} rows", t.rows);
            value.data[i * t.cols..(i + 1) * t.cols]
                .copy_from_slice(&t.data[idx * t.cols..(idx + 1) * t.cols]);
        }
        self.push(Op::Gather(table, indices), value)
    }

    pub fn reparam(&mut self, mu: usize, logvar: usize, eps: Tensor) -> usize {
        let (m, lv) = (&self.nodes[mu].value, &self.nodes[logvar].value);
        assert!(m.same_shape(lv) && m.same_shape(&eps), "reparam shape mismatch");
        let data = m
            .data
            .iter()
            .zip(&lv.data)
            .zip(&eps.data)
            .map(|((mu_k, lv_k), e_k)| mu_k + (0.5 * lv_k).exp() * e_k)
            .collect();
        let value = Tensor::from_vec(m.rows, m.cols, data);
        self.push(Op::Reparam { mu, logvar, eps }, value)
    }

    pub fn gauss_kl(&mut self, mu: usize, logvar: usize) -> usize {
        let (m, lv) = (&self.nodes[mu].value, &self.nodes[logvar].value);
        assert!(m.same_shape(lv), "gauss_kl shape mismatch");
        let mut total = 0.0;
        for (mu_k, lv_k) in m.data.iter().zip(&lv.data) {
            total += 0.5 * (mu_k * mu_k + lv_k.exp() - lv_k - 1.0);
        }
        let value = Tensor::from_vec(1, 1, vec![total / m.rows as f64]);
        self.push(Op::GaussKl { mu, logvar }, value)
    }

    pub fn masked_cross_entropy(
        &mut self,
        logits: usize,
        targets: Vec<usize>,
        lo: usize,
        hi: usize,
    ) -> usize {
        let l = &self.nodes[logits].value;
        assert_eq!(l.rows, targets.len(), "one target per row");
        assert!(lo < hi && hi <= l.cols, "mask range out of bounds");
        let mut total = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            assert!((lo..hi).contains(&target), "target outside allowed range");
            let row = &l.data[i * l.cols..(i + 1) * l.cols];
            let max = row[lo..hi].iter().copied().fold(f64::MIN, f64::max);
            let lse = max + row[lo..hi].iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[target];
        }
        let value = Tensor::from_vec(1, 1, vec![total / l.rows as f64]);
        self.push(Op::MaskedCrossEntropy { logits, targets, lo, hi }, value)
    }

    pub fn sum_all(&mut self, a: usize) -> usize {
        let value = Tensor::from_vec(1, 1, vec![self.nodes[a].value.data.iter().sum()]);
        self.push(Op::SumAll(a), value)
    }

    /// Reverse sweep from a scalar node. Returns one gradient tensor per
    /// node (zeros for nodes the loss does not depend on).
    pub fn backward(&self, loss: usize) -> Vec<Tensor> {
        assert_eq!(
            (self.nodes[loss].value.rows, self.nodes[loss].value.cols),
            (1, 1),
            "backward starts from a scalar"
        );
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[loss].data[0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            if grads[id].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[id].clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[*b].value.transpose());
                    let db = self.nodes[*a].value.transpose().matmul(&g);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::Add(a, b) => {
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g);
                }
                Op::AddRowBroadcast(mat, row) => {
                    grads[*mat].add_assign(&g);
                    let cols = g.cols;
                    for i in 0..g.rows {
                        for j in 0..cols {
                            grads[*row].data[j] += g.data[i * cols + j];
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[*b].value.data)
                        .map(|(gk, bk)| gk * bk)
                        .collect();
                    let db: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[*a].value.data)
                        .map(|(gk, ak)| gk * ak)
                        .collect();
                    grads[*a].add_assign(&Tensor::from_vec(g.rows, g.cols, da));
                    grads[*b].add_assign(&Tensor::from_vec(g.rows, g.cols, db));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(gk, yk)| gk * yk * (1.0 - yk))
                        .collect();
                    grads[*a].add_assign(&Tensor::from_vec(g.rows, g.cols, da));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(gk, yk)| gk * (1.0 - yk * yk))
                        .collect();
                    grads[*a].add_assign(&Tensor::from_vec(g.rows, g.cols, da));
                }
                Op::ScaleConst(a, c) => {
                    let da: Vec<f64> = g.data.iter().map(|gk| gk * c).collect();
                    grads[*a].add_assign(&Tensor::from_vec(g.rows, g.cols, da));
                }
                Op::AddConst(a) => {
                    grads[*a].add_assign(&g);
                }
                Op::ConcatCols(a, b) => {
                    let a_cols = self.nodes[*a].value.cols;
                    let b_cols = self.nodes[*b].value.cols;
                    let mut da = Tensor::zeros(g.rows, a_cols);
                    let mut db = Tensor::zeros(g.rows, b_cols);
                    for i in 0..g.rows {
                        for j in 0..a_cols {
                            da.data[i * a_cols + j] = g.data[i * g.cols + j];
                        }
                        for j in 0..b_cols {
                            db.data[i * b_cols + j] = g.data[i * g.cols + a_cols + j];
                        }
                    }
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::Gather(table, indices) => {
                    let cols = g.cols;
                    for (i, &idx) in indices.iter().enumerate() {
                        let dst = &mut grads[*table].data[idx * cols..(idx + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(&g.data[i * cols..(i + 1) * cols]) {
                            *d += s;
                        }
                    }
                }
                Op::Reparam { mu, logvar, eps } => {
                    grads[*mu].add_assign(&g);
                    let lv = &self.nodes[*logvar].value;
                    let dlv: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&lv.data)
                        .zip(&eps.data)
                        .map(|((gk, lv_k), e_k)| gk * 0.5 * (0.5 * lv_k).exp() * e_k)
                        .collect();
                    grads[*logvar].add_assign(&Tensor::from_vec(g.rows, g.cols, dlv));
                }
                Op::GaussKl { mu, logvar } => {
                    let scale = g.data[0] / self.nodes[*mu].value.rows as f64;
                    let m = &self.nodes[*mu].value;
                    let lv = &self.nodes[*logvar].value;
                    let dmu: Vec<f64> = m.data.iter().map(|mu_k| scale * mu_k).collect();
                    let dlv: Vec<f64> =
                        lv.data.iter().map(|lv_k| scale * 0.5 * (lv_k.exp() - 1.0)).collect();
                    grads[*mu].add_assign(&Tensor::from_vec(m.rows, m.cols, dmu));
                    grads[*logvar].add_assign(&Tensor::from_vec(lv.rows, lv.cols, dlv));
                }
                Op::MaskedCrossEntropy { logits, targets, lo, hi } => {
                    let l = &self.nodes[*logits].value;
                    let scale = g.data[0] / l.rows as f64;
                    let mut dl = Tensor::zeros(l.rows, l.cols);
                    for (i, &target) in targets.iter().enumerate() {
                        let row = &l.data[i * l.cols..(i + 1) * l.cols];
                        let max = row[*lo..*hi].iter().copied().fold(f64::MIN, f64::max);
                        let denom: f64 = row[*lo..*hi].iter().map(|&v| (v - max).exp()).sum();
                        for j in *lo..*hi {
                            let p = (row[j] - max).exp() / denom;
                            let indicator = if j == target { 1.0 } else { 0.0 };
                            dl.data[i * l.cols + j] = scale * (p - indicator);
                        }
                    }
                    grads[*logits].add_assign(&dl);
                }
                Op::SumAll(a) => {
                    let shape = (self.nodes[*a].value.rows, self.nodes[*a].value.cols);
                    let da = Tensor::from_vec(
                        shape.0,
                        shape.1,
                        vec![g.data[0]; shape.0 * shape.1],
                    );
                    grads[*a].add_assign(&da);
                }
            }
        }
        grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
