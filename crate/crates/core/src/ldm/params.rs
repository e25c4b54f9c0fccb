//! Named parameter storage with a frozen/trainable partition.

use std::sync::Arc;

use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Frozen,
    Trainable,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub role: Role,
    pub value: Arc<Array2<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, role: Role, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, role, value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self, role: Role) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.role == role).map(|(id, _)| id).collect()
    }

    /// Total number of scalars with the given role.
    pub fn scalar_count(&self, role: Role) -> usize {
        self.params.iter().filter(|p| p.role == role).map(|p| p.value.len()).sum()
    }

    /// Little-endian bytes of every parameter with `role`, in store order.
    pub fn snapshot_bytes(&self, role: Role) -> Vec<u8> {
        self.params
            .iter()
            .filter(|p| p.role == role)
            .flat_map(|p| p.value.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())
            .collect()
    }
}
